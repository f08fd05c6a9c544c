//! Deterministic oracle check runners: selection equivalence, dense
//! retrieval equivalence, one-step rewrite, the contraction law, consensus
//! exactness, finite-difference gradient checks, and entropy bounds.
//!
//! The acceptance test suite asserts these against pinned tolerances; the
//! CLI `verify` command prints them as a pass/fail report. All runners are
//! deterministic in their seed.

use rand::Rng;

use crate::config::{MemoryConfig, ScoreKind, Toggles};
use crate::error::Result;
use crate::numeric::{softmax, top_k, Matrix, Real};
use crate::oracle::{
    brute_force_select, dense_retrieve, fd_gradient, fd_gradient_guarded, max_relative_error,
};
use crate::pkm::{score, select, split_query, SubScores};
use crate::rng::stream_rng;
use crate::state::MemoryState;
use crate::update::{
    addressing_key_gradient, addressing_loss, compute_chunk_gradients, update_chunk, ChunkBatch,
};

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, std: Real) -> Vec<Real> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0_f64, std as f64).expect("positive std");
    (0..n).map(|_| normal.sample(rng) as Real).collect()
}

fn small_config(
    n_sub: usize,
    sub_dim: usize,
    value_dim: usize,
    heads: usize,
    top_k: usize,
    score_kind: ScoreKind,
    addr_weight: Real,
) -> MemoryConfig {
    MemoryConfig {
        n_sub,
        key_dim: 2 * sub_dim,
        value_dim,
        heads,
        top_k,
        chunk_size: 4096,
        score_kind,
        addr_weight,
        toggles: Toggles::default(),
        ..MemoryConfig::default()
    }
}

fn state_with_random_values(config: MemoryConfig, seed: u64) -> MemoryState {
    let mut state = MemoryState::init(config, seed).expect("valid config");
    let mut rng = stream_rng(seed, "check-values", 0);
    let values = gaussian_vec(&mut rng, state.value().data().len(), 1.0);
    state.value_mut().data_mut().copy_from_slice(&values);
    state
}

/// Outcome of the selection-equivalence sweep.
#[derive(Debug, Clone)]
pub struct SelectEquivalence {
    pub instances: usize,
    pub mismatches: usize,
}

/// Two-stage selection vs. the brute-force grid oracle over random
/// instances spanning n_sub in {8, 32, 64}, k in {1, 4, 8}, and both score
/// kinds. Equality is exact under the shared tie rule.
pub fn select_equivalence(seed: u64, instances: usize) -> Result<SelectEquivalence> {
    let sizes = [8usize, 32, 64];
    let ks = [1usize, 4, 8];
    let kinds = [ScoreKind::Idw, ScoreKind::Dot];
    let mut mismatches = 0;
    let mut done = 0;
    let mut case = 0u64;
    'outer: loop {
        for &n_sub in &sizes {
            for &k in &ks {
                for &kind in &kinds {
                    if done == instances {
                        break 'outer;
                    }
                    let mut rng = stream_rng(seed, "select-eq", case);
                    case += 1;
                    let sub_dim = 4;
                    let std = 1.0 / (sub_dim as Real).sqrt();
                    let keys1 = Matrix::from_vec(
                        n_sub,
                        sub_dim,
                        gaussian_vec(&mut rng, n_sub * sub_dim, std),
                    )?;
                    let keys2 = Matrix::from_vec(
                        n_sub,
                        sub_dim,
                        gaussian_vec(&mut rng, n_sub * sub_dim, std),
                    )?;
                    let q1 = gaussian_vec(&mut rng, sub_dim, std);
                    let q2 = gaussian_vec(&mut rng, sub_dim, std);
                    let scores = SubScores {
                        s1: score(kind, &q1, &keys1, 1e-3)?,
                        s2: score(kind, &q2, &keys2, 1e-3)?,
                    };
                    let fast = select(&scores, k)?;
                    let brute = brute_force_select(&scores, k)?;
                    let equal = fast.pair_idx == brute.pair_idx
                        && fast
                            .pair_scores
                            .iter()
                            .zip(&brute.pair_scores)
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                        && fast
                            .final_weights
                            .iter()
                            .zip(&brute.final_weights)
                            .all(|(a, b)| a.to_bits() == b.to_bits());
                    if !equal {
                        mismatches += 1;
                    }
                    done += 1;
                }
            }
        }
    }
    Ok(SelectEquivalence {
        instances: done,
        mismatches,
    })
}

/// Outcome of the dense-retrieval equivalence sweep.
#[derive(Debug, Clone)]
pub struct RetrieveEquivalence {
    pub instances: usize,
    pub max_abs_err: Real,
}

/// Product-key retrieval vs. the dense oracle that scores every slot.
pub fn retrieve_equivalence(seed: u64, instances: usize) -> Result<RetrieveEquivalence> {
    let mut max_abs_err: Real = 0.0;
    for case in 0..instances {
        let mut rng = stream_rng(seed, "retrieve-eq", case as u64);
        let n_sub = [8, 16][case % 2];
        let heads = 1 + case % 2;
        let k = [1, 2, 4][case % 3];
        let kind = if case % 2 == 0 {
            ScoreKind::Idw
        } else {
            ScoreKind::Dot
        };
        let config = small_config(n_sub, 4, 4, heads, k, kind, 10.0);
        let state = state_with_random_values(config.clone(), seed ^ case as u64);
        let q = gaussian_vec(&mut rng, config.query_dim(), 0.5);
        let fast = state.retrieve(&q)?.v_hat;
        let dense = dense_retrieve(&state, &q, k)?;
        for (a, b) in fast.iter().zip(&dense) {
            max_abs_err = max_abs_err.max((a - b).abs());
        }
    }
    Ok(RetrieveEquivalence {
        instances,
        max_abs_err,
    })
}

/// Outcome of the one-step rewrite check.
#[derive(Debug, Clone)]
pub struct RewriteCheck {
    pub max_err_unit: Real,
    pub max_err_large: Real,
}

/// k=1, gate=1, fresh slot: one update must store the target exactly, also
/// for targets of norm 1e6 (no silent clipping anywhere).
pub fn one_step_rewrite(seed: u64, instances: usize) -> Result<RewriteCheck> {
    let mut max_err_unit: Real = 0.0;
    let mut max_err_large: Real = 0.0;
    for case in 0..instances {
        for large in [false, true] {
            let mut rng = stream_rng(seed, "rewrite", (case * 2 + usize::from(large)) as u64);
            let config = small_config(8, 4, 4, 1, 1, ScoreKind::Idw, 10.0);
            let mut state = MemoryState::init(config.clone(), seed ^ case as u64)?;
            let q = gaussian_vec(&mut rng, config.query_dim(), 0.5);
            let scale = if large { 1e6 } else { 1.0 };
            let target: Vec<Real> = gaussian_vec(&mut rng, config.value_dim, 1.0)
                .into_iter()
                .map(|v| v * scale)
                .collect();
            let mut chunk = ChunkBatch::default();
            chunk.push(q.clone(), target.clone(), 1.0, "rewrite".into());
            update_chunk(&mut state, &chunk)?;
            let got = state.retrieve(&q)?.v_hat;
            let err = got
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, Real::max);
            if large {
                max_err_large = max_err_large.max(err);
            } else {
                max_err_unit = max_err_unit.max(err);
            }
        }
    }
    Ok(RewriteCheck {
        max_err_unit,
        max_err_large,
    })
}

/// Outcome of the contraction-law sweep.
#[derive(Debug, Clone)]
pub struct ContractionCheck {
    pub instances: usize,
    pub max_deviation: Real,
}

/// Single-sample chunk, gate 1, no row contention: the post-update error
/// must equal `(1 - sum s'^2)` times the pre-update error element-wise.
/// Keys are frozen (addr_weight 0) so the selection cannot drift between
/// the two retrievals.
pub fn contraction_law(seed: u64, instances: usize) -> Result<ContractionCheck> {
    let mut max_dev: Real = 0.0;
    for case in 0..instances {
        let mut rng = stream_rng(seed, "contraction", case as u64);
        let n_sub = [4, 8, 16][case % 3];
        let k = [1, 2, 4][case % 3].min(n_sub);
        let kind = if case % 2 == 0 {
            ScoreKind::Idw
        } else {
            ScoreKind::Dot
        };
        let config = small_config(n_sub, 4, 4, 1, k, kind, 0.0);
        let mut state = state_with_random_values(config.clone(), seed ^ case as u64);
        let q = gaussian_vec(&mut rng, config.query_dim(), 0.5);
        let target = gaussian_vec(&mut rng, config.value_dim, 1.0);

        let before = state.retrieve(&q)?;
        let factor = 1.0
            - before.selections[0]
                .final_weights
                .iter()
                .map(|w| w * w)
                .sum::<Real>();
        let e0: Vec<Real> = target
            .iter()
            .zip(&before.v_hat)
            .map(|(t, v)| t - v)
            .collect();

        let mut chunk = ChunkBatch::default();
        chunk.push(q.clone(), target.clone(), 1.0, "contraction".into());
        update_chunk(&mut state, &chunk)?;

        let after = state.retrieve(&q)?;
        for (e, vh) in e0.iter().zip(target.iter().zip(&after.v_hat)) {
            let e1 = vh.0 - vh.1;
            max_dev = max_dev.max((e1 - factor * e).abs());
        }
    }
    Ok(ContractionCheck {
        instances,
        max_deviation: max_dev,
    })
}

/// Outcome of the consensus-exactness check.
#[derive(Debug, Clone)]
pub struct ConsensusCheck {
    pub folds: Vec<usize>,
    pub exact: bool,
}

/// Duplicating every sample in a chunk m times must leave the aggregated
/// value gradient bit-identical, for both block-repeated and interleaved
/// duplication orders.
pub fn consensus_exact(seed: u64, instances: usize, folds: &[usize]) -> Result<ConsensusCheck> {
    let mut exact = true;
    for case in 0..instances {
        let mut rng = stream_rng(seed, "consensus", case as u64);
        // Small grid and k=2 so that rows contend within the chunk.
        let config = small_config(4, 4, 4, 1, 2, ScoreKind::Idw, 10.0);
        let state = state_with_random_values(config.clone(), seed ^ case as u64);
        let mut base = ChunkBatch::default();
        for t in 0..3 {
            base.push(
                gaussian_vec(&mut rng, config.query_dim(), 0.5),
                gaussian_vec(&mut rng, config.value_dim, 1.0),
                rng.random::<f64>() as Real,
                format!("s{t}"),
            );
        }
        let reference = compute_chunk_gradients(&state, &base)?.aggregates;

        for &m in folds {
            for interleave in [false, true] {
                let mut dup = ChunkBatch::default();
                if interleave {
                    for t in 0..base.len() {
                        for _ in 0..m {
                            dup.push(
                                base.queries[t].clone(),
                                base.targets[t].clone(),
                                base.gates[t],
                                base.tags[t].clone(),
                            );
                        }
                    }
                } else {
                    for _ in 0..m {
                        for t in 0..base.len() {
                            dup.push(
                                base.queries[t].clone(),
                                base.targets[t].clone(),
                                base.gates[t],
                                base.tags[t].clone(),
                            );
                        }
                    }
                }
                let dup_agg = compute_chunk_gradients(&state, &dup)?.aggregates;
                if dup_agg.len() != reference.len() {
                    exact = false;
                    continue;
                }
                for (row, agg) in &reference {
                    match dup_agg.get(row) {
                        Some(d) => {
                            if !agg.iter().zip(d).all(|(a, b)| a.to_bits() == b.to_bits()) {
                                exact = false;
                            }
                        }
                        None => exact = false,
                    }
                }
            }
        }
    }
    Ok(ConsensusCheck {
        folds: folds.to_vec(),
        exact,
    })
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone)]
pub struct FdCheck {
    pub instances: usize,
    pub max_rel_err: Real,
}

/// Addressing-loss key gradients vs. selection-preserving central finite
/// differences over both sub-key matrices. `negate_analytic` is a fault
/// hook used to prove the check can fail.
pub fn addressing_fd(seed: u64, instances: usize, negate_analytic: bool) -> Result<FdCheck> {
    let mut max_rel: Real = 0.0;
    for case in 0..instances {
        let mut rng = stream_rng(seed, "fd-addr", case as u64);
        let n_sub = 8;
        let k = [2, 3][case % 2];
        let kind = if case % 2 == 0 {
            ScoreKind::Idw
        } else {
            ScoreKind::Dot
        };
        let config = small_config(n_sub, 4, 4, 1, k, kind, 10.0);
        let state = state_with_random_values(config.clone(), seed ^ case as u64);
        let chunk_len = 2 + case % 3;
        let queries: Vec<Vec<Real>> = (0..chunk_len)
            .map(|_| gaussian_vec(&mut rng, config.query_dim(), 0.5))
            .collect();
        let selections: Vec<_> = queries
            .iter()
            .map(|q| state.retrieve(q).map(|r| r.selections))
            .collect::<Result<_>>()?;
        let analytic = addressing_key_gradient(&state, &queries, &selections)?;

        for set in 0..2 {
            let sub_queries: Vec<&[Real]> = queries
                .iter()
                .map(|q| {
                    let (q1, q2) = split_query(q).expect("even query");
                    if set == 0 {
                        q1
                    } else {
                        q2
                    }
                })
                .collect();
            let baseline_sets: Vec<Vec<usize>> = selections
                .iter()
                .map(|sel| {
                    let mut idx = if set == 0 {
                        sel[0].idx1.clone()
                    } else {
                        sel[0].idx2.clone()
                    };
                    idx.sort_unstable();
                    idx
                })
                .collect();

            let loss_of = |keys: &Matrix| -> Real {
                let per_token: Vec<(Vec<usize>, Vec<Real>)> = sub_queries
                    .iter()
                    .map(|q_sub| {
                        let s = score(kind, q_sub, keys, config.eps_idw).expect("score");
                        let idx = top_k(&s, k).expect("top_k");
                        let sel: Vec<Real> = idx.iter().map(|&i| s[i]).collect();
                        (idx, softmax(&sel).expect("softmax"))
                    })
                    .collect();
                let tokens: Vec<(&[usize], &[Real])> = per_token
                    .iter()
                    .map(|(i, w)| (i.as_slice(), w.as_slice()))
                    .collect();
                addressing_loss(&tokens, n_sub).expect("loss").0
            };
            let selection_ok = |keys: &Matrix| -> bool {
                sub_queries.iter().zip(&baseline_sets).all(|(q_sub, want)| {
                    let s = score(kind, q_sub, keys, config.eps_idw).expect("score");
                    let mut idx = top_k(&s, k).expect("top_k");
                    idx.sort_unstable();
                    &idx == want
                })
            };

            let keys = if set == 0 {
                state.sub_keys(0).0
            } else {
                state.sub_keys(0).1
            };
            let numeric = fd_gradient_guarded(loss_of, selection_ok, keys, 1e-5)
                .expect("selection-preserving perturbation exists");
            let mut grad = if set == 0 {
                analytic[0].0.clone()
            } else {
                analytic[0].1.clone()
            };
            if negate_analytic {
                for v in grad.data_mut() {
                    *v = -*v;
                }
            }
            max_rel = max_rel.max(max_relative_error(&grad, &numeric, 1e-8));
        }
    }
    Ok(FdCheck {
        instances,
        max_rel_err: max_rel,
    })
}

/// Value-path gradients (the unshaped per-row sums of the sum-reduced,
/// gate-weighted half-MSE) vs. central finite differences over the value
/// matrix.
pub fn value_fd(seed: u64, instances: usize) -> Result<FdCheck> {
    let mut max_rel: Real = 0.0;
    for case in 0..instances {
        let mut rng = stream_rng(seed, "fd-value", case as u64);
        let n_sub = 4;
        let k = [1, 2][case % 2];
        let config = small_config(n_sub, 4, 3, 1, k, ScoreKind::Idw, 10.0);
        let state = state_with_random_values(config.clone(), seed ^ case as u64);
        let mut chunk = ChunkBatch::default();
        for t in 0..2 + case % 3 {
            chunk.push(
                gaussian_vec(&mut rng, config.query_dim(), 0.5),
                gaussian_vec(&mut rng, config.value_dim, 1.0),
                rng.random::<f64>() as Real,
                format!("s{t}"),
            );
        }
        let grads = compute_chunk_gradients(&state, &chunk)?;
        let mut analytic = Matrix::zeros(config.n_slots(), config.value_dim);
        for (row, sum) in &grads.row_sums {
            analytic.row_mut(*row).copy_from_slice(sum);
        }

        let loss_of = |values: &Matrix| -> Real {
            let mut probe = state.clone();
            probe.value_mut().data_mut().copy_from_slice(values.data());
            compute_chunk_gradients(&probe, &chunk)
                .expect("loss eval")
                .mse_sum
        };
        let numeric = fd_gradient(loss_of, state.value(), 1e-5);
        max_rel = max_rel.max(max_relative_error(&analytic, &numeric, 1e-8));
    }
    Ok(FdCheck {
        instances,
        max_rel_err: max_rel,
    })
}

/// Outcome of the entropy bound check.
#[derive(Debug, Clone)]
pub struct EntropyCheck {
    pub bounds_ok: bool,
    /// |loss + ln(n_sub)| for a constructed uniform marginal.
    pub uniform_gap: Real,
    /// |loss| for a constructed one-hot marginal.
    pub onehot_gap: Real,
}

/// The addressing loss lies in [-ln(sqrt(N)), 0]; constructed uniform and
/// one-hot chunks hit the bounds.
pub fn entropy_bounds(seed: u64, instances: usize) -> Result<EntropyCheck> {
    let mut bounds_ok = true;
    for case in 0..instances {
        let mut rng = stream_rng(seed, "entropy", case as u64);
        let n_sub = [4, 8, 16][case % 3];
        let k = [1, 2, 4][case % 3];
        let chunk_len = 1 + case % 5;
        let mut tokens: Vec<(Vec<usize>, Vec<Real>)> = Vec::new();
        for _ in 0..chunk_len {
            let scores = gaussian_vec(&mut rng, n_sub, 1.0);
            let idx = top_k(&scores, k)?;
            let sel: Vec<Real> = idx.iter().map(|&i| scores[i]).collect();
            tokens.push((idx, softmax(&sel)?));
        }
        let token_refs: Vec<(&[usize], &[Real])> = tokens
            .iter()
            .map(|(i, w)| (i.as_slice(), w.as_slice()))
            .collect();
        let (loss, p_bar) = addressing_loss(&token_refs, n_sub)?;
        let sum: Real = p_bar.iter().sum();
        if !(loss <= 0.0 && loss >= -(n_sub as Real).ln() - 1e-9) {
            bounds_ok = false;
        }
        if (sum - 1.0).abs() > 1e-12 {
            bounds_ok = false;
        }
    }

    // Uniform marginal: n_sub/k tokens, each spreading equal weight over a
    // disjoint block of k slots.
    let n_sub = 8;
    let k = 4;
    let mut tokens: Vec<(Vec<usize>, Vec<Real>)> = Vec::new();
    for block in 0..n_sub / k {
        let idx: Vec<usize> = (block * k..(block + 1) * k).collect();
        tokens.push((idx, vec![1.0 / k as Real; k]));
    }
    let token_refs: Vec<(&[usize], &[Real])> = tokens
        .iter()
        .map(|(i, w)| (i.as_slice(), w.as_slice()))
        .collect();
    let (uniform_loss, _) = addressing_loss(&token_refs, n_sub)?;
    let uniform_gap = (uniform_loss + (n_sub as Real).ln()).abs();

    let onehot: Vec<(&[usize], &[Real])> = vec![(&[3][..], &[1.0][..])];
    let (onehot_loss, _) = addressing_loss(&onehot, n_sub)?;
    let onehot_gap = onehot_loss.abs();

    Ok(EntropyCheck {
        bounds_ok,
        uniform_gap,
        onehot_gap,
    })
}
