//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one pass/fail line (run with `--nocapture` to see the measurements; the
//! determinism criterion for CLI result files lives in the CLI crate's own
//! acceptance test target).
//!
//! Tolerances assume the default f64 build.

#![cfg(not(feature = "f32"))]

use std::time::Instant;

use fwpkm::bench::{
    clustered_query_stream, gen_episode, run_niter, Chunking, EpisodeSpec, GateMode,
};
use fwpkm::checks;
use fwpkm::diagnostics::usage_stats;
use fwpkm::layer::{project_inputs, LayerState, LayerWeights};
use fwpkm::numeric::Real;
use fwpkm::rng::stream_rng;
use fwpkm::update::update_chunk;
use fwpkm::{MemoryConfig, MemoryState, Toggles};

const SEED: u64 = 0xACCE;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_01_selection_exactness() {
    let start = Instant::now();
    let out = checks::select_equivalence(SEED, 1000).unwrap();
    let elapsed = start.elapsed();
    report(
        "01 selection exactness",
        out.mismatches == 0 && out.instances == 1000 && elapsed.as_secs_f64() < 10.0,
        &format!(
            "{} mismatches / {} instances, {elapsed:.2?}",
            out.mismatches, out.instances
        ),
    );
}

#[test]
fn criterion_02_retrieval_exactness() {
    let start = Instant::now();
    let out = checks::retrieve_equivalence(SEED, 200).unwrap();
    let elapsed = start.elapsed();
    report(
        "02 retrieval exactness",
        out.max_abs_err < 1e-12 && elapsed.as_secs_f64() < 5.0,
        &format!("max abs err {:.3e}, {elapsed:.2?}", out.max_abs_err),
    );
}

#[test]
fn criterion_03_one_step_rewrite() {
    let out = checks::one_step_rewrite(SEED, 25).unwrap();
    report(
        "03 one-step rewrite",
        out.max_err_unit <= 1e-12 && out.max_err_large <= 1e-12 * 1e6,
        &format!(
            "unit-scale err {:.3e}, 1e6-scale err {:.3e}",
            out.max_err_unit, out.max_err_large
        ),
    );
}

#[test]
fn criterion_04_contraction_law() {
    let out = checks::contraction_law(SEED, 500).unwrap();
    report(
        "04 contraction law",
        out.max_deviation < 1e-10 && out.instances == 500,
        &format!(
            "max deviation {:.3e} over {} instances",
            out.max_deviation, out.instances
        ),
    );
}

#[test]
fn criterion_05_consensus_exactness() {
    let out = checks::consensus_exact(SEED, 50, &[2, 5]).unwrap();
    report(
        "05 consensus exactness",
        out.exact,
        &format!("m in {:?}, block and interleaved duplication", out.folds),
    );
}

#[test]
fn criterion_06_gradient_correctness() {
    let addr = checks::addressing_fd(SEED, 100, false).unwrap();
    let value = checks::value_fd(SEED, 100).unwrap();
    report(
        "06 gradient correctness",
        addr.max_rel_err < 1e-4 && value.max_rel_err < 1e-4,
        &format!(
            "addressing fd {:.3e}, value fd {:.3e}, 100 instances each",
            addr.max_rel_err, value.max_rel_err
        ),
    );
}

#[test]
fn criterion_07_entropy_bounds() {
    let out = checks::entropy_bounds(SEED, 200).unwrap();
    report(
        "07 entropy bounds",
        out.bounds_ok && out.uniform_gap < 1e-9 && out.onehot_gap == 0.0,
        &format!(
            "bounds ok, uniform gap {:.3e}, one-hot gap {:.3e}",
            out.uniform_gap, out.onehot_gap
        ),
    );
}

fn usage_config(addressing: bool) -> MemoryConfig {
    MemoryConfig {
        n_sub: 64,
        key_dim: 16,
        value_dim: 32,
        heads: 1,
        top_k: 8,
        chunk_size: 512,
        track_ledger: false,
        toggles: Toggles {
            addressing_loss: addressing,
            ..Toggles::default()
        },
        ..MemoryConfig::default()
    }
}

fn usage_fraction(seed: u64, addressing: bool) -> Real {
    let chunks = clustered_query_stream(16, 32, 50, 512, 16, 0.1, seed).unwrap();
    let mut state = MemoryState::init(usage_config(addressing), 0x31337 ^ seed).unwrap();
    let mut reports = Vec::with_capacity(chunks.len());
    for chunk in &chunks {
        reports.push(update_chunk(&mut state, chunk).unwrap());
    }
    usage_stats(&reports, state.config().n_slots())
        .unwrap()
        .usage_fraction
}

#[test]
fn criterion_08_addressing_efficacy() {
    let start = Instant::now();
    let seeds = 50u64;
    let mut wins = 0;
    let (mut mean_on, mut mean_off) = (0.0, 0.0);
    for seed in 0..seeds {
        let on = usage_fraction(seed, true);
        let off = usage_fraction(seed, false);
        if on > off {
            wins += 1;
        }
        mean_on += on;
        mean_off += off;
    }
    let elapsed = start.elapsed();
    report(
        "08 addressing efficacy",
        wins * 10 >= seeds * 9 && elapsed.as_secs_f64() < 120.0,
        &format!(
            "usage on > off in {wins}/{seeds} seeds (means {:.3} vs {:.3}), {elapsed:.2?}",
            mean_on / seeds as Real,
            mean_off / seeds as Real
        ),
    );
}

fn loaded_config() -> MemoryConfig {
    MemoryConfig {
        n_sub: 64,
        key_dim: 16,
        value_dim: 64,
        heads: 1,
        top_k: 8,
        chunk_size: 512,
        track_ledger: false,
        ..MemoryConfig::default()
    }
}

fn loaded_spec(seed: u64, n_distractors: usize) -> EpisodeSpec {
    EpisodeSpec {
        n_needles: 50,
        n_distractors,
        codebook_size: 64,
        key_dim: 16,
        value_dim: 64,
        seed,
        gate_mode: GateMode::AllOne,
        normalize_values: true,
    }
}

#[test]
fn criterion_09_iterative_memorization() {
    let start = Instant::now();
    let seeds = 100u64;
    let mut wins = 0;
    let (mut mean1, mut mean2) = (0.0, 0.0);
    for seed in 0..seeds {
        let episode = gen_episode(&loaded_spec(seed, 1000)).unwrap();
        let mut state = MemoryState::init(loaded_config(), 0xBEEF ^ seed).unwrap();
        let acc = run_niter(&mut state, &episode, 2, Chunking::PerEpisode)
            .unwrap()
            .per_iter_accuracy;
        if acc[1] >= acc[0] {
            wins += 1;
        }
        mean1 += acc[0];
        mean2 += acc[1];
    }
    mean1 /= seeds as Real;
    mean2 /= seeds as Real;
    let elapsed = start.elapsed();
    report(
        "09 iterative memorization",
        wins * 100 >= seeds * 95 && mean2 - mean1 >= 0.10 && elapsed.as_secs_f64() < 300.0,
        &format!(
            "2-iter >= 1-iter in {wins}/{seeds} seeds, means {mean1:.3} -> {mean2:.3} \
             (gap {:.3}), {elapsed:.2?}",
            mean2 - mean1
        ),
    );
}

#[test]
fn criterion_10_load_scaling() {
    let start = Instant::now();
    let seeds = 16u64;
    let loads = [1000usize, 2000, 8000, 32000];
    let mut mean2 = Vec::with_capacity(loads.len());
    let mut mean4_heaviest = 0.0;
    for (li, &load) in loads.iter().enumerate() {
        let iters = if li == loads.len() - 1 { 4 } else { 2 };
        let mut m2 = 0.0;
        for seed in 0..seeds {
            let episode = gen_episode(&loaded_spec(seed, load)).unwrap();
            let mut state = MemoryState::init(loaded_config(), 0xBEEF ^ seed).unwrap();
            let acc = run_niter(&mut state, &episode, iters, Chunking::PerEpisode)
                .unwrap()
                .per_iter_accuracy;
            m2 += acc[1];
            if iters == 4 {
                mean4_heaviest += acc[3];
            }
        }
        mean2.push(m2 / seeds as Real);
    }
    mean4_heaviest /= seeds as Real;
    let monotone = mean2.windows(2).all(|w| w[0] >= w[1]);
    let elapsed = start.elapsed();
    report(
        "10 load scaling",
        monotone && mean4_heaviest >= mean2[loads.len() - 1] && elapsed.as_secs_f64() < 600.0,
        &format!(
            "2-iter means across x1->x32 load {:?}, 4-iter at x32 {:.3}, {elapsed:.2?}",
            mean2
                .iter()
                .map(|m| (m * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            mean4_heaviest
        ),
    );
}

#[test]
fn criterion_12_gating_endpoints() {
    let config = MemoryConfig {
        n_sub: 8,
        key_dim: 8,
        value_dim: 8,
        heads: 1,
        top_k: 2,
        chunk_size: 64,
        ..MemoryConfig::default()
    };
    let mut exact = true;
    for (bias, expect_gate) in [(-745.0, 0.0_f64), (40.0, 1.0)] {
        let mut weights = LayerWeights::init(8, &config, SEED).unwrap();
        weights.g.linear.bias[0] = bias;
        let mut layer = LayerState::new(MemoryState::init(config.clone(), SEED).unwrap());
        let mut rng = stream_rng(SEED, "gating-endpoint", 0);
        use rand::Rng;
        let mut hs: Vec<Vec<Real>> = Vec::new();
        for _ in 0..4 {
            hs.push((0..8).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
        }
        layer.forward_token(&weights, &hs[0], "warm").unwrap();
        for h in &hs[1..] {
            let (q, v, _) = project_inputs(&weights, &config, h).unwrap();
            let v_hat = layer.memory.retrieve(&q).unwrap().v_hat;
            let out = layer.forward_token(&weights, h, "t").unwrap();
            let want = if expect_gate == 0.0 { &v } else { &v_hat };
            exact &= out.gate == expect_gate as Real;
            exact &= out
                .interpolated
                .iter()
                .zip(want)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }
    report(
        "12 gating endpoints",
        exact,
        "o(g=0) == value residual and o(g=1) == memory prediction bit-wise",
    );
}
