//! Product-key addressing: sub-query decomposition, sub-key scoring, and
//! exact two-stage top-k selection over the Cartesian slot grid.
//!
//! Slots form an `n_sub x n_sub` grid; slot `(i, j)` scores as
//! `s1[i] + s2[j]` and flattens to index `i * n_sub + j`. Selecting the
//! top-k rows and columns first and then ranking the k^2 candidate sums is
//! exact: any pair in the true top-k of the full grid must have its row and
//! column in the per-side top-k lists under the shared tie rule (higher
//! score first, lower index on ties).

use crate::config::ScoreKind;
use crate::error::{Error, Result};
use crate::numeric::{dot, softmax, squared_distance, top_k, Matrix, Real};

/// Scores of a query against both sub-key matrices.
#[derive(Debug, Clone)]
pub struct SubScores {
    pub s1: Vec<Real>,
    pub s2: Vec<Real>,
}

/// Result of two-stage top-k selection for one head.
///
/// `sub_weights1[r]` is the softmax weight of sub-key `idx1[r]` among the
/// selected rows (and likewise for the second sub-key set); these feed the
/// addressing loss. `final_weights` is the softmax over the selected pair
/// scores and drives retrieval.
#[derive(Debug, Clone)]
pub struct Selection {
    pub n_sub: usize,
    pub idx1: Vec<usize>,
    pub idx2: Vec<usize>,
    pub pair_idx: Vec<usize>,
    pub pair_scores: Vec<Real>,
    pub final_weights: Vec<Real>,
    pub sub_weights1: Vec<Real>,
    pub sub_weights2: Vec<Real>,
}

impl Selection {
    /// Decode a flat slot index into its (row, column) sub-indices.
    pub fn decode_pair(&self, flat: usize) -> (usize, usize) {
        (flat / self.n_sub, flat % self.n_sub)
    }
}

/// Split a query into its two sub-queries (first and second halves).
pub fn split_query(q: &[Real]) -> Result<(&[Real], &[Real])> {
    if !q.len().is_multiple_of(2) || q.is_empty() {
        return Err(Error::dim("split_query", q.len() + 1, q.len()));
    }
    Ok(q.split_at(q.len() / 2))
}

/// Inverse-distance-weight score per sub-key row:
/// `s_i = -log(eps + ||q - K_i||^2)`.
pub fn score_idw(q_sub: &[Real], keys: &Matrix, eps: Real) -> Result<Vec<Real>> {
    if q_sub.len() != keys.cols() {
        return Err(Error::dim("score_idw", keys.cols(), q_sub.len()));
    }
    Ok((0..keys.rows())
        .map(|i| -(eps + squared_distance(q_sub, keys.row(i))).ln())
        .collect())
}

/// Dot-product score per sub-key row: `s_i = q . K_i`.
pub fn score_dot(q_sub: &[Real], keys: &Matrix) -> Result<Vec<Real>> {
    if q_sub.len() != keys.cols() {
        return Err(Error::dim("score_dot", keys.cols(), q_sub.len()));
    }
    Ok((0..keys.rows()).map(|i| dot(q_sub, keys.row(i))).collect())
}

/// Score one sub-query against a sub-key matrix with the configured kind.
pub fn score(kind: ScoreKind, q_sub: &[Real], keys: &Matrix, eps: Real) -> Result<Vec<Real>> {
    match kind {
        ScoreKind::Idw => score_idw(q_sub, keys, eps),
        ScoreKind::Dot => score_dot(q_sub, keys),
    }
}

/// Exact two-stage top-k over the Cartesian sum grid.
pub fn select(scores: &SubScores, k: usize) -> Result<Selection> {
    let n_sub = scores.s1.len();
    if scores.s2.len() != n_sub {
        return Err(Error::dim("select", n_sub, scores.s2.len()));
    }
    if k == 0 || k > n_sub {
        return Err(Error::InvalidArgument(format!(
            "select: k={k} out of range 1..={n_sub}"
        )));
    }

    let idx1 = top_k(&scores.s1, k)?;
    let idx2 = top_k(&scores.s2, k)?;

    // Rank the k^2 candidate pairs by (sum desc, flat index asc). The flat
    // tie rule matches the brute-force oracle exactly.
    let mut candidates: Vec<(usize, Real)> = Vec::with_capacity(k * k);
    for &i in &idx1 {
        for &j in &idx2 {
            candidates.push((i * n_sub + j, scores.s1[i] + scores.s2[j]));
        }
    }
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    candidates.truncate(k);

    let pair_idx: Vec<usize> = candidates.iter().map(|c| c.0).collect();
    let pair_scores: Vec<Real> = candidates.iter().map(|c| c.1).collect();
    let final_weights = softmax(&pair_scores)?;

    let selected1: Vec<Real> = idx1.iter().map(|&i| scores.s1[i]).collect();
    let selected2: Vec<Real> = idx2.iter().map(|&j| scores.s2[j]).collect();
    let sub_weights1 = softmax(&selected1)?;
    let sub_weights2 = softmax(&selected2)?;

    Ok(Selection {
        n_sub,
        idx1,
        idx2,
        pair_idx,
        pair_scores,
        final_weights,
        sub_weights1,
        sub_weights2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[cfg(not(feature = "f32"))]
    const TOL: Real = 1e-12;
    #[cfg(feature = "f32")]
    const TOL: Real = 1e-5;

    #[test]
    fn split_query_halves() {
        let q = [1.0, 2.0, 3.0, 4.0];
        let (a, b) = split_query(&q).unwrap();
        assert_eq!(a, &[1.0, 2.0]);
        assert_eq!(b, &[3.0, 4.0]);
        assert!(split_query(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn idw_score_of_exact_match_is_neg_log_eps() {
        let keys = Matrix::from_vec(2, 2, vec![0.5, -0.25, 1.0, 1.0]).unwrap();
        let s = score_idw(&[0.5, -0.25], &keys, 1e-3).unwrap();
        assert!((s[0] - 6.907755278982137).abs() < TOL);
    }

    #[test]
    fn idw_score_unit_distance() {
        let keys = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let s = score_idw(&[0.0, 0.0], &keys, 1e-3).unwrap();
        // -ln(1.001)
        assert!((s[0] - (-0.0009995003330834232)).abs() < TOL);
    }

    #[test]
    fn idw_closer_rows_score_higher() {
        let keys = Matrix::from_vec(2, 1, vec![0.1, 0.2]).unwrap();
        let s = score_idw(&[0.0], &keys, 1e-3).unwrap();
        assert!(s[0] > s[1]);
    }

    #[test]
    fn dot_score_arithmetic() {
        let keys = Matrix::from_vec(2, 2, vec![2.0, 5.0, 0.0, 3.0]).unwrap();
        assert_eq!(score_dot(&[1.0, 0.0], &keys).unwrap(), vec![2.0, 0.0]);
        assert_eq!(score_dot(&[0.0, 0.0], &keys).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn select_k1_takes_argmax_pair() {
        let scores = SubScores {
            s1: vec![3.0, 1.0],
            s2: vec![2.0, 0.0],
        };
        let sel = select(&scores, 1).unwrap();
        assert_eq!(sel.pair_idx, vec![0]);
        assert_eq!(sel.pair_scores, vec![5.0]);
        assert_eq!(sel.final_weights, vec![1.0]);
    }

    #[test]
    fn select_breaks_pair_ties_by_flat_index() {
        let scores = SubScores {
            s1: vec![3.0, 1.0],
            s2: vec![2.0, 0.0],
        };
        let sel = select(&scores, 2).unwrap();
        // Sums: (0,0)=5, (0,1)=3, (1,0)=3, (1,1)=1. The tie at 3 goes to flat
        // index 1 = (0,1).
        assert_eq!(sel.pair_idx, vec![0, 1]);
        assert_eq!(sel.pair_scores, vec![5.0, 3.0]);
        assert!((sel.final_weights[0] - 0.8807970779778823).abs() < TOL);
        assert!((sel.final_weights[1] - 0.11920292202211756).abs() < TOL);
    }

    #[test]
    fn selection_weights_sum_to_one() {
        let scores = SubScores {
            s1: vec![0.3, -1.2, 0.9, 0.0],
            s2: vec![2.0, 0.1, -0.4, 1.1],
        };
        let sel = select(&scores, 3).unwrap();
        for w in [&sel.final_weights, &sel.sub_weights1, &sel.sub_weights2] {
            let sum: Real = w.iter().sum();
            assert!((sum - 1.0).abs() < TOL);
        }
        let mut sorted = sel.pair_idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), sel.pair_idx.len());
        assert!(sel.pair_idx.iter().all(|&p| p < 16));
    }

    #[test]
    fn select_rejects_bad_k() {
        let scores = SubScores {
            s1: vec![1.0, 2.0],
            s2: vec![1.0, 2.0],
        };
        assert!(select(&scores, 0).is_err());
        assert!(select(&scores, 3).is_err());
    }
}
