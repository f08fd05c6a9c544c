//! Oracle check suite: selection and retrieval equivalence, one-step
//! rewrite, contraction, consensus, finite-difference gradients, and
//! entropy bounds, each printed as a pass/fail line with its measurement.

use fwpkm::checks;

use crate::exit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Select,
    Retrieve,
    Rewrite,
    Contraction,
    Consensus,
    GradAddr,
    GradValue,
    Entropy,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::Select,
        Check::Retrieve,
        Check::Rewrite,
        Check::Contraction,
        Check::Consensus,
        Check::GradAddr,
        Check::GradValue,
        Check::Entropy,
    ];

    pub fn parse(name: &str) -> Result<Check, String> {
        match name {
            "select" => Ok(Check::Select),
            "retrieve" => Ok(Check::Retrieve),
            "rewrite" => Ok(Check::Rewrite),
            "contraction" => Ok(Check::Contraction),
            "consensus" => Ok(Check::Consensus),
            "grad-addr" => Ok(Check::GradAddr),
            "grad-value" => Ok(Check::GradValue),
            "entropy" => Ok(Check::Entropy),
            other => Err(format!(
                "unknown check '{other}' (expected select, retrieve, rewrite, contraction, \
                 consensus, grad-addr, grad-value, or entropy)"
            )),
        }
    }
}

pub struct VerifyOptions {
    pub checks: Vec<Check>,
    pub seed: u64,
    /// Test hook: flip the sign of the analytic addressing gradient so the
    /// finite-difference check must fail.
    pub inject_gradient_fault: bool,
}

pub fn run(options: &VerifyOptions) -> anyhow::Result<i32> {
    let mut all_pass = true;
    let mut line = |name: &str, pass: bool, detail: String| {
        println!("{name:<24} {} ({detail})", if pass { "PASS" } else { "FAIL" });
        all_pass &= pass;
    };

    for check in &options.checks {
        match check {
            Check::Select => {
                let out = checks::select_equivalence(options.seed, 1000)?;
                line(
                    "select-equivalence",
                    out.mismatches == 0,
                    format!("{} mismatches / {} instances", out.mismatches, out.instances),
                );
            }
            Check::Retrieve => {
                let out = checks::retrieve_equivalence(options.seed, 200)?;
                line(
                    "retrieve-equivalence",
                    out.max_abs_err < 1e-12,
                    format!("max abs err {:.3e}", out.max_abs_err),
                );
            }
            Check::Rewrite => {
                let out = checks::one_step_rewrite(options.seed, 25)?;
                line(
                    "one-step-rewrite",
                    out.max_err_unit <= 1e-12 && out.max_err_large <= 1e-6,
                    format!(
                        "unit err {:.3e}, 1e6-scale err {:.3e}",
                        out.max_err_unit, out.max_err_large
                    ),
                );
            }
            Check::Contraction => {
                let out = checks::contraction_law(options.seed, 500)?;
                line(
                    "contraction-law",
                    out.max_deviation < 1e-10,
                    format!("max deviation {:.3e}", out.max_deviation),
                );
            }
            Check::Consensus => {
                let out = checks::consensus_exact(options.seed, 50, &[2, 5])?;
                line(
                    "consensus-exactness",
                    out.exact,
                    format!("m in {:?}, exact bit equality", out.folds),
                );
            }
            Check::GradAddr => {
                let out =
                    checks::addressing_fd(options.seed, 100, options.inject_gradient_fault)?;
                line(
                    "grad-addressing-fd",
                    out.max_rel_err < 1e-4,
                    format!("max rel err {:.3e}", out.max_rel_err),
                );
            }
            Check::GradValue => {
                let out = checks::value_fd(options.seed, 100)?;
                line(
                    "grad-value-fd",
                    out.max_rel_err < 1e-4,
                    format!("max rel err {:.3e}", out.max_rel_err),
                );
            }
            Check::Entropy => {
                let out = checks::entropy_bounds(options.seed, 200)?;
                line(
                    "entropy-bounds",
                    out.bounds_ok && out.uniform_gap < 1e-9 && out.onehot_gap == 0.0,
                    format!(
                        "uniform gap {:.3e}, one-hot gap {:.3e}",
                        out.uniform_gap, out.onehot_gap
                    ),
                );
            }
        }
    }
    Ok(if all_pass { exit::OK } else { exit::CHECK_FAILED })
}
