//! Slot-usage statistics, gating histograms, and slot-provenance traces.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Real;
use crate::state::{MemoryState, RetrievalResult, WriteRecord};
use crate::update::UpdateReport;

/// Aggregated slot-usage over a window of chunk updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UsageStats {
    pub unique_slots_used: usize,
    /// Fraction of all N slots touched within the window.
    pub usage_fraction: Real,
    /// Token-weighted marginal slot usage per head per sub-key set.
    pub p_bar: Vec<[Vec<Real>; 2]>,
    /// Mean entropy of the window marginals, in [0, ln(sqrt(N))].
    pub marginal_entropy: Real,
}

fn entropy(p: &[Real]) -> Real {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<Real>()
}

/// Usage statistics over a window of update reports.
pub fn usage_stats(reports: &[UpdateReport], n_slots: usize) -> Result<UsageStats> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("empty report window".into()));
    }
    if n_slots == 0 {
        return Err(Error::InvalidArgument("n_slots must be positive".into()));
    }
    let mut slots: BTreeSet<usize> = BTreeSet::new();
    for report in reports {
        slots.extend(report.read_counts.keys().copied());
    }

    let heads = reports[0].p_bar.len();
    let n_sub = reports[0].p_bar[0][0].len();
    let total_tokens: usize = reports.iter().map(|r| r.chunk_len).sum();
    let mut p_bar: Vec<[Vec<Real>; 2]> =
        vec![[vec![0.0; n_sub], vec![0.0; n_sub]]; heads];
    for report in reports {
        if report.p_bar.len() != heads || report.p_bar[0][0].len() != n_sub {
            return Err(Error::InvalidArgument(
                "reports in one window must share a configuration".into(),
            ));
        }
        let w = report.chunk_len as Real / total_tokens as Real;
        for (acc, src) in p_bar.iter_mut().zip(&report.p_bar) {
            for set in 0..2 {
                for (a, s) in acc[set].iter_mut().zip(&src[set]) {
                    *a += w * s;
                }
            }
        }
    }
    let mut entropy_sum = 0.0;
    for head in &p_bar {
        for set in head {
            entropy_sum += entropy(set);
        }
    }
    let marginal_entropy = entropy_sum / (heads * 2) as Real;

    Ok(UsageStats {
        unique_slots_used: slots.len(),
        usage_fraction: slots.len() as Real / n_slots as Real,
        p_bar,
        marginal_entropy,
    })
}

/// Usage statistics recovered from a ledger over a step window. The marginal
/// here is the write-weight marginal (final pair weights scattered onto each
/// sub-key axis), not the per-token softmax marginal that reports carry.
pub fn usage_stats_from_ledger(
    ledger: &BTreeMap<usize, Vec<WriteRecord>>,
    n_sub: usize,
    steps: std::ops::Range<u64>,
) -> Result<UsageStats> {
    if steps.is_empty() {
        return Err(Error::InvalidArgument("empty step window".into()));
    }
    if n_sub == 0 {
        return Err(Error::InvalidArgument("n_sub must be positive".into()));
    }
    let mut slots: BTreeSet<usize> = BTreeSet::new();
    let mut marginal1 = vec![0.0; n_sub];
    let mut marginal2 = vec![0.0; n_sub];
    let mut total = 0.0;
    for (&slot, records) in ledger {
        for record in records {
            if steps.contains(&record.step) {
                slots.insert(slot);
                marginal1[slot / n_sub] += record.weight;
                marginal2[slot % n_sub] += record.weight;
                total += record.weight;
            }
        }
    }
    if total > 0.0 {
        for v in marginal1.iter_mut().chain(marginal2.iter_mut()) {
            *v /= total;
        }
    }
    let marginal_entropy = (entropy(&marginal1) + entropy(&marginal2)) / 2.0;
    Ok(UsageStats {
        unique_slots_used: slots.len(),
        usage_fraction: slots.len() as Real / (n_sub * n_sub) as Real,
        p_bar: vec![[marginal1, marginal2]],
        marginal_entropy,
    })
}

/// Equal-width histogram of gate values over [0, 1].
pub fn gating_histogram(gates: &[Real], n_bins: usize) -> Result<Vec<usize>> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be >= 1".into()));
    }
    let mut bins = vec![0usize; n_bins];
    for &g in gates {
        if !(g.is_finite() && (0.0..=1.0).contains(&g)) {
            return Err(Error::InvalidArgument(format!(
                "gate {g} outside [0, 1]"
            )));
        }
        let bin = ((g * n_bins as Real) as usize).min(n_bins - 1);
        bins[bin] += 1;
    }
    Ok(bins)
}

/// One retrieved slot joined against its latest ledger writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub slot: usize,
    pub head: usize,
    /// Retrieval weight of this slot in the probe.
    pub weight: Real,
    /// Latest write records, newest first, up to the requested depth. Empty
    /// when the slot was never written.
    pub records: Vec<WriteRecord>,
    pub unwritten: bool,
    /// Whether the latest record's tag equals the supplied ground truth.
    /// Absent without a truth tag or for unwritten slots.
    pub hit: Option<bool>,
}

/// Retrieved slots in descending weight order, with provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProvenanceTrace {
    pub entries: Vec<TraceEntry>,
}

/// Flat JSON-lines form of one trace entry: the ledger sidecar fields of the
/// latest record plus the retrieval weight and hit flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceLine {
    pub slot: usize,
    pub head: usize,
    pub step: Option<u64>,
    pub sample_tag: Option<String>,
    pub weight: Real,
    pub hit: Option<bool>,
    pub unwritten: bool,
}

/// Join a retrieval's slots against the state ledger. Pure over
/// (ledger, retrieval); slots are listed in descending retrieval weight.
pub fn trace_retrieval(
    state: &MemoryState,
    retrieval: &RetrievalResult,
    truth_tag: Option<&str>,
    depth: usize,
) -> Result<ProvenanceTrace> {
    if !state.config().track_ledger {
        return Err(Error::InvalidArgument(
            "ledger tracking is disabled for this state".into(),
        ));
    }
    let depth = depth.max(1);
    let mut entries = Vec::new();
    for (head, sel) in retrieval.selections.iter().enumerate() {
        for (&slot, &weight) in sel.pair_idx.iter().zip(&sel.final_weights) {
            let latest = state.latest_records(slot, depth);
            let mut records: Vec<WriteRecord> = latest.to_vec();
            records.reverse();
            let unwritten = records.is_empty();
            let hit = match (truth_tag, records.first()) {
                (Some(truth), Some(record)) => Some(record.sample_tag == truth),
                _ => None,
            };
            entries.push(TraceEntry {
                slot,
                head,
                weight,
                records,
                unwritten,
                hit,
            });
        }
    }
    entries.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .expect("finite weights")
            .then(a.slot.cmp(&b.slot))
            .then(a.head.cmp(&b.head))
    });
    Ok(ProvenanceTrace { entries })
}

/// Flatten a trace for JSON-lines export.
pub fn trace_lines(trace: &ProvenanceTrace) -> Vec<TraceLine> {
    trace
        .entries
        .iter()
        .map(|e| TraceLine {
            slot: e.slot,
            head: e.head,
            step: e.records.first().map(|r| r.step),
            sample_tag: e.records.first().map(|r| r.sample_tag.clone()),
            weight: e.weight,
            hit: e.hit,
            unwritten: e.unwritten,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MemoryConfig;
    use crate::rng::stream_rng;
    use crate::update::{update_chunk, ChunkBatch};
    use rand::Rng;

    fn small_config() -> MemoryConfig {
        MemoryConfig {
            n_sub: 8,
            key_dim: 8,
            value_dim: 4,
            heads: 1,
            top_k: 2,
            chunk_size: 16,
            ..MemoryConfig::default()
        }
    }

    fn report_with(p1: Vec<Real>, p2: Vec<Real>, slots: &[usize], chunk_len: usize) -> UpdateReport {
        UpdateReport {
            step: 0,
            chunk_len,
            mse_sum: 0.0,
            addr_loss: vec![[0.0, 0.0]],
            marginal_entropy: vec![[0.0, 0.0]],
            p_bar: vec![[p1, p2]],
            read_counts: slots.iter().map(|&s| (s, 1)).collect(),
            rows_written: slots.len(),
            value_grad_norm: 0.0,
            key_grad_norms: vec![[0.0, 0.0]],
        }
    }

    #[test]
    fn degenerate_usage_single_slot() {
        let mut p1 = vec![0.0; 8];
        p1[3] = 1.0;
        let mut p2 = vec![0.0; 8];
        p2[5] = 1.0;
        let report = report_with(p1, p2, &[3 * 8 + 5], 4);
        let stats = usage_stats(&[report], 64).unwrap();
        assert_eq!(stats.unique_slots_used, 1);
        assert!((stats.usage_fraction - 1.0 / 64.0).abs() < 1e-15);
        assert_eq!(stats.marginal_entropy, 0.0);
    }

    #[test]
    fn uniform_marginal_hits_entropy_upper_bound() {
        let uniform = vec![1.0 / 8.0; 8];
        let report = report_with(uniform.clone(), uniform, &[0], 4);
        let stats = usage_stats(&[report], 64).unwrap();
        #[cfg(not(feature = "f32"))]
        let tol: Real = 1e-12;
        #[cfg(feature = "f32")]
        let tol: Real = 1e-5;
        assert!((stats.marginal_entropy - (8.0 as Real).ln()).abs() < tol);
    }

    #[test]
    fn usage_fraction_is_monotone_in_window_size() {
        let config = small_config();
        let mut state = MemoryState::init(config.clone(), 31).unwrap();
        let mut rng = stream_rng(31, "diag", 0);
        let mut reports = Vec::new();
        for c in 0..6 {
            let mut chunk = ChunkBatch::default();
            for t in 0..4 {
                let q: Vec<Real> = (0..8).map(|_| rng.random::<f64>() as Real - 0.5).collect();
                let v: Vec<Real> = (0..4).map(|_| rng.random::<f64>() as Real).collect();
                chunk.push(q, v, 1.0, format!("c{c}t{t}"));
            }
            reports.push(update_chunk(&mut state, &chunk).unwrap());
        }
        let mut last = 0.0;
        for w in 1..=reports.len() {
            let stats = usage_stats(&reports[..w], config.n_slots()).unwrap();
            assert!(stats.usage_fraction >= last);
            last = stats.usage_fraction;
        }
    }

    #[test]
    fn empty_window_is_an_error() {
        assert!(usage_stats(&[], 64).is_err());
        let ledger = std::collections::BTreeMap::new();
        assert!(usage_stats_from_ledger(&ledger, 8, 0..0).is_err());
    }

    #[test]
    fn ledger_usage_counts_window_steps_only() {
        let config = small_config();
        let mut state = MemoryState::init(config.clone(), 32).unwrap();
        let mut rng = stream_rng(32, "diag-ledger", 0);
        for c in 0..3 {
            let mut chunk = ChunkBatch::default();
            let q: Vec<Real> = (0..8).map(|_| rng.random::<f64>() as Real - 0.5).collect();
            let v: Vec<Real> = (0..4).map(|_| rng.random::<f64>() as Real).collect();
            chunk.push(q, v, 1.0, format!("c{c}"));
            update_chunk(&mut state, &chunk).unwrap();
        }
        let all = usage_stats_from_ledger(state.ledger(), config.n_sub, 0..3).unwrap();
        let first = usage_stats_from_ledger(state.ledger(), config.n_sub, 0..1).unwrap();
        assert!(all.unique_slots_used >= first.unique_slots_used);
        assert!(first.unique_slots_used >= 1);
    }

    #[test]
    fn histogram_masses_and_errors() {
        assert_eq!(gating_histogram(&[0.0, 0.0, 0.0], 4).unwrap(), vec![3, 0, 0, 0]);
        assert_eq!(gating_histogram(&[1.0], 4).unwrap(), vec![0, 0, 0, 1]);
        let counts = gating_histogram(&[0.1, 0.4, 0.6, 0.9], 2).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 4);
        assert!(gating_histogram(&[1.5], 4).is_err());
        assert!(gating_histogram(&[0.5], 0).is_err());
    }

    #[test]
    fn uniform_gates_fill_bins_evenly() {
        let mut rng = stream_rng(7, "hist", 0);
        let gates: Vec<Real> = (0..1000).map(|_| rng.random::<f64>() as Real).collect();
        let bins = gating_histogram(&gates, 10).unwrap();
        assert_eq!(bins.iter().sum::<usize>(), 1000);
        // Chi-squared against uniform with 9 dof; 33.7 is far beyond the
        // 0.9999 quantile, so a seeded uniform sample stays well under it.
        let expected = 100.0;
        let chi2: f64 = bins
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 33.7, "chi2 {chi2}");
    }

    #[test]
    fn trace_joins_ledger_and_flags_hits() {
        // Frozen keys so the probe selects exactly the written slots.
        let mut config = small_config();
        config.addr_weight = 0.0;
        let mut state = MemoryState::init(config.clone(), 33).unwrap();
        let q: Vec<Real> = (0..8).map(|i| (i as Real * 0.21).cos()).collect();
        let mut chunk = ChunkBatch::default();
        chunk.push(q.clone(), vec![1.0, 0.0, -1.0, 0.5], 1.0, "X".into());
        update_chunk(&mut state, &chunk).unwrap();

        let retrieval = state.retrieve(&q).unwrap();
        let trace = trace_retrieval(&state, &retrieval, Some("X"), 1).unwrap();
        assert_eq!(trace.entries.len(), config.heads * config.top_k);
        assert!(trace
            .entries
            .windows(2)
            .all(|w| w[0].weight >= w[1].weight));
        assert!(trace.entries.iter().any(|e| e.hit == Some(true)));

        let missed = trace_retrieval(&state, &retrieval, Some("Y"), 1).unwrap();
        assert!(missed
            .entries
            .iter()
            .filter(|e| !e.unwritten)
            .all(|e| e.hit == Some(false)));
    }

    #[test]
    fn fresh_memory_traces_as_unwritten() {
        let config = small_config();
        let state = MemoryState::init(config, 34).unwrap();
        let q: Vec<Real> = (0..8).map(|i| (i as Real * 0.11).sin()).collect();
        let retrieval = state.retrieve(&q).unwrap();
        let trace = trace_retrieval(&state, &retrieval, Some("X"), 1).unwrap();
        assert!(trace.entries.iter().all(|e| e.unwritten && e.hit.is_none()));
        let lines = trace_lines(&trace);
        assert!(lines.iter().all(|l| l.unwritten && l.sample_tag.is_none()));
    }

    #[test]
    fn trace_requires_ledger_tracking() {
        let mut config = small_config();
        config.track_ledger = false;
        let state = MemoryState::init(config, 35).unwrap();
        let q: Vec<Real> = (0..8).map(|i| (i as Real * 0.11).sin()).collect();
        let retrieval = state.retrieve(&q).unwrap();
        assert!(trace_retrieval(&state, &retrieval, None, 1).is_err());
    }
}
