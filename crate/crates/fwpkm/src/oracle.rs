//! Independent brute-force and finite-difference references used to validate
//! the main implementation. These deliberately re-derive scoring, selection,
//! and readout with their own code; only the shared numeric primitives are
//! reused. They run at toy sizes only.

use crate::error::Result;
use crate::numeric::{softmax, Matrix, Real};
use crate::pkm::{split_query, SubScores};
use crate::state::MemoryState;
use crate::config::ScoreKind;

/// Brute-force selection over the full Cartesian sum grid.
#[derive(Debug, Clone)]
pub struct BruteForceSelection {
    pub pair_idx: Vec<usize>,
    pub pair_scores: Vec<Real>,
    pub final_weights: Vec<Real>,
}

/// Materialize all `n_sub^2` pair sums, sort by (sum desc, flat index asc),
/// truncate to `k`, and softmax the surviving scores.
pub fn brute_force_select(scores: &SubScores, k: usize) -> Result<BruteForceSelection> {
    let n_sub = scores.s1.len();
    let mut all: Vec<(usize, Real)> = Vec::with_capacity(n_sub * n_sub);
    for i in 0..n_sub {
        for j in 0..n_sub {
            all.push((i * n_sub + j, scores.s1[i] + scores.s2[j]));
        }
    }
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    let pair_idx: Vec<usize> = all.iter().map(|c| c.0).collect();
    let pair_scores: Vec<Real> = all.iter().map(|c| c.1).collect();
    let final_weights = softmax(&pair_scores)?;
    Ok(BruteForceSelection {
        pair_idx,
        pair_scores,
        final_weights,
    })
}

/// Dense reference retrieval: score every slot directly, select, softmax,
/// and accumulate value rows, summing over heads. Scoring is re-derived
/// here rather than shared with the addressing module.
pub fn dense_retrieve(state: &MemoryState, q: &[Real], k: usize) -> Result<Vec<Real>> {
    let config = state.config();
    let n_sub = config.n_sub;
    let mut v_hat = vec![0.0; config.value_dim];
    for head in 0..config.heads {
        let q_head = &q[head * config.key_dim..(head + 1) * config.key_dim];
        let (q1, q2) = split_query(q_head)?;
        let (k1, k2) = state.sub_keys(head);
        let sub_score = |q_sub: &[Real], keys: &Matrix, row: usize| -> Real {
            match config.score_kind {
                ScoreKind::Idw => {
                    let mut d2 = 0.0;
                    for (a, b) in q_sub.iter().zip(keys.row(row)) {
                        let d = a - b;
                        d2 += d * d;
                    }
                    -(config.eps_idw + d2).ln()
                }
                ScoreKind::Dot => q_sub
                    .iter()
                    .zip(keys.row(row))
                    .map(|(a, b)| a * b)
                    .sum(),
            }
        };
        let mut all: Vec<(usize, Real)> = Vec::with_capacity(n_sub * n_sub);
        for i in 0..n_sub {
            let s1 = sub_score(q1, k1, i);
            for j in 0..n_sub {
                all.push((i * n_sub + j, s1 + sub_score(q2, k2, j)));
            }
        }
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        let weights = softmax(&all.iter().map(|c| c.1).collect::<Vec<_>>())?;
        for ((slot, _), w) in all.iter().zip(&weights) {
            for (acc, x) in v_hat.iter_mut().zip(state.value().row(*slot)) {
                *acc += w * x;
            }
        }
    }
    Ok(v_hat)
}

/// Central finite differences of a scalar function over a matrix:
/// `(f(x + h e) - f(x - h e)) / (2h)` per coordinate.
pub fn fd_gradient<F: Fn(&Matrix) -> Real>(f: F, at: &Matrix, h: Real) -> Matrix {
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    let mut probe = at.clone();
    for idx in 0..at.data().len() {
        let orig = at.data()[idx];
        probe.data_mut()[idx] = orig + h;
        let up = f(&probe);
        probe.data_mut()[idx] = orig - h;
        let down = f(&probe);
        probe.data_mut()[idx] = orig;
        grad.data_mut()[idx] = (up - down) / (2.0 * h);
    }
    grad
}

/// Central finite differences with a selection guard: if perturbing a
/// coordinate flips any top-k index set (detected by `selection_ok`), the
/// step is re-drawn smaller. Returns `None` if some coordinate cannot be
/// perturbed without flipping selection even at the smallest step.
pub fn fd_gradient_guarded<F, G>(f: F, selection_ok: G, at: &Matrix, h: Real) -> Option<Matrix>
where
    F: Fn(&Matrix) -> Real,
    G: Fn(&Matrix) -> bool,
{
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    let mut probe = at.clone();
    for idx in 0..at.data().len() {
        let orig = at.data()[idx];
        let mut step = h;
        let mut done = false;
        for _ in 0..6 {
            probe.data_mut()[idx] = orig + step;
            let up_ok = selection_ok(&probe);
            let up = f(&probe);
            probe.data_mut()[idx] = orig - step;
            let down_ok = selection_ok(&probe);
            let down = f(&probe);
            probe.data_mut()[idx] = orig;
            if up_ok && down_ok {
                grad.data_mut()[idx] = (up - down) / (2.0 * step);
                done = true;
                break;
            }
            step /= 10.0;
        }
        if !done {
            return None;
        }
    }
    Some(grad)
}

/// Largest relative error between two gradients, ignoring entries where both
/// sides are tiny (those compare as exact zeros in the selection-fixed
/// regime).
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix, floor: Real) -> Real {
    let mut worst: Real = 0.0;
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        let scale = a.abs().max(n.abs());
        if scale <= floor {
            continue;
        }
        worst = worst.max((a - n).abs() / scale);
    }
    worst
}
