//! Chunk-level fast-weight updates: gate-weighted MSE gradients on the value
//! matrix with row-contribution (consensus) averaging, and marginal-entropy
//! gradients on the sub-key matrices.
//!
//! All per-token predictions in a chunk use the pre-update weights, and both
//! gradient families are linearized at that same point; the value and key
//! updates are then applied in one atomic step. Top-k index sets are treated
//! as constants under differentiation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::MemoryConfig;
use crate::error::{Error, Result};
use crate::numeric::{squared_distance, Matrix, Real};
use crate::pkm::{split_query, Selection};
use crate::state::{MemoryState, RetrievalResult, WriteRecord};
use crate::config::ScoreKind;

/// One update chunk: aligned queries, target values (already lookahead,
/// paired and normalized upstream), gate scalars, and provenance tags.
#[derive(Debug, Clone, Default)]
pub struct ChunkBatch {
    pub queries: Vec<Vec<Real>>,
    pub targets: Vec<Vec<Real>>,
    pub gates: Vec<Real>,
    pub tags: Vec<String>,
}

impl ChunkBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn push(&mut self, query: Vec<Real>, target: Vec<Real>, gate: Real, tag: String) {
        self.queries.push(query);
        self.targets.push(target);
        self.gates.push(gate);
        self.tags.push(tag);
    }

    fn validate(&self, config: &MemoryConfig) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("chunk must be non-empty".into()));
        }
        if self.targets.len() != self.len()
            || self.gates.len() != self.len()
            || self.tags.len() != self.len()
        {
            return Err(Error::InvalidArgument(
                "chunk fields must have equal lengths".into(),
            ));
        }
        for q in &self.queries {
            if q.len() != config.query_dim() {
                return Err(Error::dim("chunk query", config.query_dim(), q.len()));
            }
        }
        for v in &self.targets {
            if v.len() != config.value_dim {
                return Err(Error::dim("chunk target", config.value_dim, v.len()));
            }
        }
        for &g in &self.gates {
            if !(g.is_finite() && (0.0..=1.0).contains(&g)) {
                return Err(Error::InvalidArgument(format!(
                    "gate {g} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Marginal usage and entropy-loss value for one sub-key set over a chunk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AddressingTerm {
    /// `sum_i p_bar_i ln p_bar_i`, i.e. minus the marginal entropy.
    pub loss: Real,
    pub p_bar: Vec<Real>,
}

/// Metrics of one applied chunk update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateReport {
    /// Chunk index this update was applied at (state step before increment).
    pub step: u64,
    pub chunk_len: usize,
    /// Sum-reduced, gate-weighted, half-scaled MSE over the chunk.
    pub mse_sum: Real,
    /// Addressing loss per head per sub-key set.
    pub addr_loss: Vec<[Real; 2]>,
    /// Marginal entropy per head per sub-key set (negated loss).
    pub marginal_entropy: Vec<[Real; 2]>,
    /// Marginal slot usage per head per sub-key set.
    pub p_bar: Vec<[Vec<Real>; 2]>,
    /// Accesses per value row within the chunk.
    pub read_counts: BTreeMap<usize, u32>,
    pub rows_written: usize,
    /// Frobenius norm of the aggregated value gradient.
    pub value_grad_norm: Real,
    /// Frobenius norms of the key gradients per head per sub-key set.
    pub key_grad_norms: Vec<[Real; 2]>,
}

/// Gradient of the per-sample half-MSE w.r.t. one value row under sum
/// reduction: `-gate * (v - v_hat) * weight`.
pub fn value_row_gradient(
    v_hat: &[Real],
    v: &[Real],
    weight: Real,
    gate: Real,
) -> Result<Vec<Real>> {
    if v_hat.len() != v.len() {
        return Err(Error::dim("value_row_gradient", v.len(), v_hat.len()));
    }
    Ok(v_hat
        .iter()
        .zip(v)
        .map(|(vh, t)| -(gate * (t - vh) * weight))
        .collect())
}

fn contribution_hash(c: &[Real]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in c {
        for b in (*v as f64).to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

fn bits_equal(a: &[Real], b: &[Real]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (*x as f64).to_bits() == (*y as f64).to_bits())
}

/// Consensus averaging: per row, the sum of per-sample gradients divided by
/// that row's read count within the chunk.
///
/// Bit-identical contributions are grouped and folded in first-seen order
/// with integer count/total ratios, so an m-fold duplicated chunk reproduces
/// the original aggregate exactly (the ratios reduce to the same rationals).
pub fn aggregate_value_gradients(
    per_row: &BTreeMap<usize, Vec<Vec<Real>>>,
) -> BTreeMap<usize, Vec<Real>> {
    let mut out = BTreeMap::new();
    for (&row, contributions) in per_row {
        let total = contributions.len() as Real;
        let hashes: Vec<u64> = contributions.iter().map(|c| contribution_hash(c)).collect();
        // (representative index, hash, count), first-seen order
        let mut groups: Vec<(usize, u64, u32)> = Vec::new();
        'next: for (i, c) in contributions.iter().enumerate() {
            for g in &mut groups {
                if g.1 == hashes[i] && bits_equal(&contributions[g.0], c) {
                    g.2 += 1;
                    continue 'next;
                }
            }
            groups.push((i, hashes[i], 1));
        }
        let mut agg = vec![0.0; contributions[0].len()];
        for (rep, _, count) in groups {
            let ratio = count as Real / total;
            for (a, v) in agg.iter_mut().zip(&contributions[rep]) {
                *a += v * ratio;
            }
        }
        out.insert(row, agg);
    }
    out
}

/// Marginal-entropy addressing loss for one sub-key set.
///
/// `tokens` holds, per token, the selected sub-key indices and their softmax
/// weights. Returns `(loss, p_bar)` where `p_bar` averages the scattered
/// weights over the chunk and `loss = sum_i p_bar_i ln p_bar_i` with
/// `0 ln 0 := 0`.
pub fn addressing_loss(tokens: &[(&[usize], &[Real])], n_sub: usize) -> Result<(Real, Vec<Real>)> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument(
            "addressing_loss needs at least one token".into(),
        ));
    }
    let chunk_len = tokens.len() as Real;
    let mut p_bar = vec![0.0; n_sub];
    for (idx, weights) in tokens {
        for (&i, &w) in idx.iter().zip(*weights) {
            p_bar[i] += w;
        }
    }
    for p in &mut p_bar {
        *p /= chunk_len;
    }
    let loss = p_bar
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum();
    Ok((loss, p_bar))
}

fn score_jacobian_accum(
    kind: ScoreKind,
    eps_idw: Real,
    q_sub: &[Real],
    key_row: &[Real],
    coeff: Real,
    grad_row: &mut [Real],
) {
    match kind {
        ScoreKind::Idw => {
            // d/dK of -ln(eps + ||q - K||^2) is 2 (q - K) / (eps + ||q - K||^2)
            let factor = 2.0 * coeff / (eps_idw + squared_distance(q_sub, key_row));
            for ((g, q), k) in grad_row.iter_mut().zip(q_sub).zip(key_row) {
                *g += factor * (q - k);
            }
        }
        ScoreKind::Dot => {
            for (g, q) in grad_row.iter_mut().zip(q_sub) {
                *g += coeff * q;
            }
        }
    }
}

/// Analytic gradient of the addressing loss w.r.t. both sub-key matrices of
/// every head, with the top-k index sets held fixed. Rows never selected by
/// any token in the chunk receive exactly zero gradient.
pub fn addressing_key_gradient(
    state: &MemoryState,
    queries: &[Vec<Real>],
    selections: &[Vec<Selection>],
) -> Result<Vec<(Matrix, Matrix)>> {
    let config = state.config();
    let chunk_len = queries.len() as Real;
    let mut out = Vec::with_capacity(config.heads);
    for head in 0..config.heads {
        let mut grads = [
            Matrix::zeros(config.n_sub, config.sub_key_dim()),
            Matrix::zeros(config.n_sub, config.sub_key_dim()),
        ];
        for (set, grad) in grads.iter_mut().enumerate() {
            let tokens: Vec<(&[usize], &[Real])> = selections
                .iter()
                .map(|sel| {
                    let s = &sel[head];
                    if set == 0 {
                        (s.idx1.as_slice(), s.sub_weights1.as_slice())
                    } else {
                        (s.idx2.as_slice(), s.sub_weights2.as_slice())
                    }
                })
                .collect();
            let (_, p_bar) = addressing_loss(&tokens, config.n_sub)?;

            let keys = if set == 0 {
                state.sub_keys(head).0
            } else {
                state.sub_keys(head).1
            };
            for (t, (idx, weights)) in tokens.iter().enumerate() {
                let q_head =
                    &queries[t][head * config.key_dim..(head + 1) * config.key_dim];
                let (q1, q2) = split_query(q_head)?;
                let q_sub = if set == 0 { q1 } else { q2 };

                let g_terms: Vec<Real> =
                    idx.iter().map(|&i| p_bar[i].ln() + 1.0).collect();
                let inner: Real = weights
                    .iter()
                    .zip(&g_terms)
                    .map(|(w, g)| w * g)
                    .sum();
                for (m, &row) in idx.iter().enumerate() {
                    let dz = weights[m] * (g_terms[m] - inner) / chunk_len;
                    score_jacobian_accum(
                        config.score_kind,
                        config.eps_idw,
                        q_sub,
                        keys.row(row),
                        dz,
                        grad.row_mut(row),
                    );
                }
            }
        }
        let [g1, g2] = grads;
        out.push((g1, g2));
    }
    Ok(out)
}

/// Gradient of the gate-weighted MSE w.r.t. the sub-key matrices, flowing
/// through the retrieval softmax with the top-k sets held fixed. Used when
/// the addressing-loss toggle is off.
pub fn mse_key_gradient(
    state: &MemoryState,
    queries: &[Vec<Real>],
    selections: &[Vec<Selection>],
    residuals: &[Vec<Real>],
    eff_gates: &[Real],
) -> Result<Vec<(Matrix, Matrix)>> {
    let config = state.config();
    let mut out = Vec::with_capacity(config.heads);
    for head in 0..config.heads {
        let mut grads = [
            Matrix::zeros(config.n_sub, config.sub_key_dim()),
            Matrix::zeros(config.n_sub, config.sub_key_dim()),
        ];
        for (t, sel_heads) in selections.iter().enumerate() {
            let sel = &sel_heads[head];
            let q_head = &queries[t][head * config.key_dim..(head + 1) * config.key_dim];
            let (q1, q2) = split_query(q_head)?;

            // dL/dw_p = eff_gate * (v_hat - v) . V_p
            let dl_dw: Vec<Real> = sel
                .pair_idx
                .iter()
                .map(|&slot| {
                    let row = state.value().row(slot);
                    let dot: Real = residuals[t]
                        .iter()
                        .zip(row)
                        .map(|(r, v)| -r * v)
                        .sum();
                    eff_gates[t] * dot
                })
                .collect();
            let s: Real = sel
                .final_weights
                .iter()
                .zip(&dl_dw)
                .map(|(w, d)| w * d)
                .sum();

            // Scatter softmax-jacobian terms onto the two sub-score axes.
            let mut ds1: Vec<(usize, Real)> = Vec::with_capacity(sel.pair_idx.len());
            let mut ds2: Vec<(usize, Real)> = Vec::with_capacity(sel.pair_idx.len());
            let add = |acc: &mut Vec<(usize, Real)>, row: usize, v: Real| {
                if let Some(entry) = acc.iter_mut().find(|(r, _)| *r == row) {
                    entry.1 += v;
                } else {
                    acc.push((row, v));
                }
            };
            for (p, &flat) in sel.pair_idx.iter().enumerate() {
                let du = sel.final_weights[p] * (dl_dw[p] - s);
                let (i, j) = sel.decode_pair(flat);
                add(&mut ds1, i, du);
                add(&mut ds2, j, du);
            }

            let (k1, k2) = state.sub_keys(head);
            for &(row, du) in &ds1 {
                score_jacobian_accum(
                    config.score_kind,
                    config.eps_idw,
                    q1,
                    k1.row(row),
                    du,
                    grads[0].row_mut(row),
                );
            }
            for &(row, du) in &ds2 {
                score_jacobian_accum(
                    config.score_kind,
                    config.eps_idw,
                    q2,
                    k2.row(row),
                    du,
                    grads[1].row_mut(row),
                );
            }
        }
        let [g1, g2] = grads;
        out.push((g1, g2));
    }
    Ok(out)
}

/// Everything `update_chunk` derives before touching state. Exposed so the
/// finite-difference oracle can check the exact production gradients.
#[derive(Debug)]
pub struct ChunkGradients {
    pub retrievals: Vec<RetrievalResult>,
    /// Per-token `v - v_hat`.
    pub residuals: Vec<Vec<Real>>,
    /// Gates as applied to the loss (all ones when loss weighting is off).
    pub eff_gates: Vec<Real>,
    pub mse_sum: Real,
    /// Per-row lists of per-access value gradients.
    pub per_row_contributions: BTreeMap<usize, Vec<Vec<Real>>>,
    /// Unshaped per-row sums (the true gradient of the scalar chunk loss).
    pub row_sums: BTreeMap<usize, Vec<Real>>,
    /// Consensus-averaged per-row gradients actually applied.
    pub aggregates: BTreeMap<usize, Vec<Real>>,
    /// Addressing loss and marginal usage per head per sub-key set.
    pub addressing: Vec<[AddressingTerm; 2]>,
    /// Key gradients for the active key path (addressing or MSE-to-keys).
    pub key_grads: Vec<(Matrix, Matrix)>,
}

/// Compute all gradients for a chunk at the current (pre-update) state.
pub fn compute_chunk_gradients(
    state: &MemoryState,
    chunk: &ChunkBatch,
) -> Result<ChunkGradients> {
    let config = state.config();
    chunk.validate(config)?;

    let retrievals: Vec<RetrievalResult> = chunk
        .queries
        .iter()
        .map(|q| state.retrieve(q))
        .collect::<Result<_>>()?;

    let eff_gates: Vec<Real> = if config.toggles.loss_weighting {
        chunk.gates.clone()
    } else {
        vec![1.0; chunk.len()]
    };

    let mut residuals = Vec::with_capacity(chunk.len());
    let mut mse_sum = 0.0;
    for (t, target) in chunk.targets.iter().enumerate() {
        let resid: Vec<Real> = target
            .iter()
            .zip(&retrievals[t].v_hat)
            .map(|(v, vh)| v - vh)
            .collect();
        mse_sum += eff_gates[t] * 0.5 * resid.iter().map(|r| r * r).sum::<Real>();
        residuals.push(resid);
    }

    let mut per_row: BTreeMap<usize, Vec<Vec<Real>>> = BTreeMap::new();
    for (t, res) in retrievals.iter().enumerate() {
        for sel in &res.selections {
            for (&slot, &w) in sel.pair_idx.iter().zip(&sel.final_weights) {
                let grad = value_row_gradient(
                    &retrievals[t].v_hat,
                    &chunk.targets[t],
                    w,
                    eff_gates[t],
                )?;
                per_row.entry(slot).or_default().push(grad);
            }
        }
    }

    let mut row_sums: BTreeMap<usize, Vec<Real>> = BTreeMap::new();
    for (&row, contribs) in &per_row {
        let mut sum = vec![0.0; config.value_dim];
        for c in contribs {
            for (s, v) in sum.iter_mut().zip(c) {
                *s += v;
            }
        }
        row_sums.insert(row, sum);
    }
    let aggregates = aggregate_value_gradients(&per_row);

    let selections: Vec<Vec<Selection>> =
        retrievals.iter().map(|r| r.selections.clone()).collect();

    let mut addressing = Vec::with_capacity(config.heads);
    for head in 0..config.heads {
        let mut terms: Vec<AddressingTerm> = Vec::with_capacity(2);
        for set in 0..2 {
            let tokens: Vec<(&[usize], &[Real])> = selections
                .iter()
                .map(|sel| {
                    let s = &sel[head];
                    if set == 0 {
                        (s.idx1.as_slice(), s.sub_weights1.as_slice())
                    } else {
                        (s.idx2.as_slice(), s.sub_weights2.as_slice())
                    }
                })
                .collect();
            let (loss, p_bar) = addressing_loss(&tokens, config.n_sub)?;
            terms.push(AddressingTerm { loss, p_bar });
        }
        let mut it = terms.into_iter();
        addressing.push([it.next().unwrap(), it.next().unwrap()]);
    }

    let key_grads = if config.toggles.addressing_loss {
        addressing_key_gradient(state, &chunk.queries, &selections)?
    } else {
        mse_key_gradient(state, &chunk.queries, &selections, &residuals, &eff_gates)?
    };

    Ok(ChunkGradients {
        retrievals,
        residuals,
        eff_gates,
        mse_sum,
        per_row_contributions: per_row,
        row_sums,
        aggregates,
        addressing,
        key_grads,
    })
}

/// Apply aggregated value-row updates in place: `V_i <- V_i - lr * agg_i`.
/// Validates every aggregate first so a non-finite gradient aborts without
/// touching state, then appends the chunk's write records to the ledger.
pub fn apply_value_update(
    state: &mut MemoryState,
    aggregates: &BTreeMap<usize, Vec<Real>>,
    writes: &[(usize, WriteRecord)],
) -> Result<()> {
    let config = state.config().clone();
    for (row, agg) in aggregates {
        if agg.len() != config.value_dim {
            return Err(Error::dim("apply_value_update", config.value_dim, agg.len()));
        }
        if !agg.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value gradient for row {row}; update aborted"
            )));
        }
    }
    for (&row, agg) in aggregates {
        let dest = state.value_mut().row_mut(row);
        for (d, g) in dest.iter_mut().zip(agg) {
            *d -= config.lr * g;
        }
    }
    if config.track_ledger {
        for (slot, record) in writes {
            state.ledger_append(*slot, record.clone());
        }
    }
    Ok(())
}

/// Apply key updates in place: `K <- K - weight * grad` for both sub-key
/// matrices of every head. Aborts atomically on non-finite gradients.
pub fn apply_key_update(
    state: &mut MemoryState,
    grads: &[(Matrix, Matrix)],
    weight: Real,
) -> Result<()> {
    for (g1, g2) in grads {
        for g in [g1, g2] {
            if !g.data().iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(
                    "non-finite key gradient; update aborted".into(),
                ));
            }
        }
    }
    for (head, (g1, g2)) in grads.iter().enumerate() {
        let (k1, k2) = state.keys_mut(head);
        for (dest, grad) in [(k1, g1), (k2, g2)] {
            for (d, g) in dest.data_mut().iter_mut().zip(grad.data()) {
                *d -= weight * g;
            }
        }
    }
    Ok(())
}

/// Apply one fast-weight update from a chunk. Errors if the chunk exceeds
/// the configured chunk size; re-memorization modes that treat a whole
/// stream as one chunk use [`update_chunk_unbounded`].
pub fn update_chunk(state: &mut MemoryState, chunk: &ChunkBatch) -> Result<UpdateReport> {
    if chunk.len() > state.config().chunk_size {
        return Err(Error::InvalidArgument(format!(
            "chunk of {} tokens exceeds configured chunk size {}",
            chunk.len(),
            state.config().chunk_size
        )));
    }
    update_chunk_unbounded(state, chunk)
}

/// [`update_chunk`] without the chunk-size cap.
pub fn update_chunk_unbounded(
    state: &mut MemoryState,
    chunk: &ChunkBatch,
) -> Result<UpdateReport> {
    let grads = compute_chunk_gradients(state, chunk)?;
    let config = state.config().clone();

    // Pre-validate the key gradients so a failure after the value update
    // cannot leave state half-written.
    for (g1, g2) in &grads.key_grads {
        if !g1.data().iter().all(|v| v.is_finite())
            || !g2.data().iter().all(|v| v.is_finite())
        {
            return Err(Error::Numeric(
                "non-finite key gradient; update aborted".into(),
            ));
        }
    }

    let step = state.step();
    let mut writes: Vec<(usize, WriteRecord)> = Vec::new();
    if config.track_ledger {
        for (t, res) in grads.retrievals.iter().enumerate() {
            for sel in &res.selections {
                for (&slot, &w) in sel.pair_idx.iter().zip(&sel.final_weights) {
                    writes.push((
                        slot,
                        WriteRecord {
                            step,
                            sample_tag: chunk.tags[t].clone(),
                            weight: w,
                        },
                    ));
                }
            }
        }
    }

    apply_value_update(state, &grads.aggregates, &writes)?;
    let key_weight = if config.toggles.addressing_loss {
        config.addr_weight
    } else {
        config.lr
    };
    apply_key_update(state, &grads.key_grads, key_weight)?;
    state.bump_step();

    let read_counts: BTreeMap<usize, u32> = grads
        .per_row_contributions
        .iter()
        .map(|(&row, c)| (row, c.len() as u32))
        .collect();
    let value_grad_norm = grads
        .aggregates
        .values()
        .flat_map(|a| a.iter().map(|v| v * v))
        .sum::<Real>()
        .sqrt();
    let key_grad_norms: Vec<[Real; 2]> = grads
        .key_grads
        .iter()
        .map(|(g1, g2)| [g1.frobenius_norm(), g2.frobenius_norm()])
        .collect();
    let addr_loss: Vec<[Real; 2]> = grads
        .addressing
        .iter()
        .map(|[a, b]| [a.loss, b.loss])
        .collect();
    let marginal_entropy: Vec<[Real; 2]> =
        addr_loss.iter().map(|[a, b]| [-a, -b]).collect();
    let p_bar: Vec<[Vec<Real>; 2]> = grads
        .addressing
        .iter()
        .map(|[a, b]| [a.p_bar.clone(), b.p_bar.clone()])
        .collect();

    Ok(UpdateReport {
        step,
        chunk_len: chunk.len(),
        mse_sum: grads.mse_sum,
        addr_loss,
        marginal_entropy,
        p_bar,
        read_counts,
        rows_written: grads.aggregates.len(),
        value_grad_norm,
        key_grad_norms,
    })
}
