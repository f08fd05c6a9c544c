//! The fast weights (two sub-key matrices per head and one shared value
//! matrix), retrieval against them, and the slot-provenance ledger.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::MemoryConfig;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Real};
use crate::pkm::{score, select, split_query, Selection, SubScores};
use crate::rng::stream_rng;

/// One write into a slot: which chunk wrote it, the caller-supplied sample
/// tag, and the retrieval weight the write carried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteRecord {
    pub step: u64,
    pub sample_tag: String,
    pub weight: Real,
}

/// Retrieval output: per-head selections plus the combined value prediction.
#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub selections: Vec<Selection>,
    pub v_hat: Vec<Real>,
}

/// Fast-weight memory state. Heads own separate sub-key matrices and share
/// the value matrix; head outputs are summed.
///
/// Retrieval never mutates state. Updates require exclusive access (`&mut`),
/// so the borrow checker enforces the single-writer rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    config: MemoryConfig,
    k1: Vec<Matrix>,
    k2: Vec<Matrix>,
    v: Matrix,
    ledger: BTreeMap<usize, Vec<WriteRecord>>,
    step: u64,
}

impl MemoryState {
    /// Fresh state: sub-key rows are i.i.d. Gaussian with std
    /// `1/sqrt(sub_key_dim)` (unit-scale rows against normalized queries),
    /// the value matrix is all zeros so a fresh memory predicts null and the
    /// first one-hot write stores its target exactly. Deterministic in
    /// `seed`.
    pub fn init(config: MemoryConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.sub_key_dim();
        let std = 1.0 / (d as f64).sqrt();
        let normal = Normal::new(0.0_f64, std).expect("std is positive");
        let make_keys = |stream: &str| -> Vec<Matrix> {
            (0..config.heads)
                .map(|h| {
                    let mut rng = stream_rng(seed, stream, h as u64);
                    let data: Vec<Real> = (0..config.n_sub * d)
                        .map(|_| normal.sample(&mut rng) as Real)
                        .collect();
                    Matrix::from_vec(config.n_sub, d, data).expect("finite init")
                })
                .collect()
        };
        let k1 = make_keys("init-k1");
        let k2 = make_keys("init-k2");
        let v = Matrix::zeros(config.n_slots(), config.value_dim);
        Ok(MemoryState {
            config,
            k1,
            k2,
            v,
            ledger: BTreeMap::new(),
            step: 0,
        })
    }

    /// Rebuild from raw parts (snapshot decoding).
    pub(crate) fn from_parts(
        config: MemoryConfig,
        k1: Vec<Matrix>,
        k2: Vec<Matrix>,
        v: Matrix,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.sub_key_dim();
        for keys in k1.iter().chain(&k2) {
            if keys.rows() != config.n_sub || keys.cols() != d {
                return Err(Error::Storage("sub-key matrix shape mismatch".into()));
            }
        }
        if k1.len() != config.heads || k2.len() != config.heads {
            return Err(Error::Storage("head count mismatch".into()));
        }
        if v.rows() != config.n_slots() || v.cols() != config.value_dim {
            return Err(Error::Storage("value matrix shape mismatch".into()));
        }
        Ok(MemoryState {
            config,
            k1,
            k2,
            v,
            ledger: BTreeMap::new(),
            step,
        })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn sub_keys(&self, head: usize) -> (&Matrix, &Matrix) {
        (&self.k1[head], &self.k2[head])
    }

    pub fn value(&self) -> &Matrix {
        &self.v
    }

    pub fn ledger(&self) -> &BTreeMap<usize, Vec<WriteRecord>> {
        &self.ledger
    }

    /// Most recent write records for a slot, newest first, up to `depth`.
    pub fn latest_records(&self, slot: usize, depth: usize) -> &[WriteRecord] {
        match self.ledger.get(&slot) {
            Some(records) => {
                let start = records.len().saturating_sub(depth);
                &records[start..]
            }
            None => &[],
        }
    }

    pub(crate) fn value_mut(&mut self) -> &mut Matrix {
        &mut self.v
    }

    pub(crate) fn keys_mut(&mut self, head: usize) -> (&mut Matrix, &mut Matrix) {
        let (a, b) = (&mut self.k1[head], &mut self.k2[head]);
        (a, b)
    }

    pub(crate) fn ledger_append(&mut self, slot: usize, record: WriteRecord) {
        self.ledger.entry(slot).or_default().push(record);
    }

    pub(crate) fn ledger_replace(&mut self, ledger: BTreeMap<usize, Vec<WriteRecord>>) {
        self.ledger = ledger;
    }

    pub(crate) fn bump_step(&mut self) {
        self.step += 1;
    }

    /// Score, select, and read out one query against the current weights.
    pub fn retrieve(&self, q: &[Real]) -> Result<RetrievalResult> {
        if q.len() != self.config.query_dim() {
            return Err(Error::dim("retrieve", self.config.query_dim(), q.len()));
        }
        let mut v_hat = vec![0.0; self.config.value_dim];
        let mut selections = Vec::with_capacity(self.config.heads);
        for head in 0..self.config.heads {
            let q_head = &q[head * self.config.key_dim..(head + 1) * self.config.key_dim];
            let (q1, q2) = split_query(q_head)?;
            let scores = SubScores {
                s1: score(self.config.score_kind, q1, &self.k1[head], self.config.eps_idw)?,
                s2: score(self.config.score_kind, q2, &self.k2[head], self.config.eps_idw)?,
            };
            let sel = select(&scores, self.config.top_k)?;
            for (&slot, &w) in sel.pair_idx.iter().zip(&sel.final_weights) {
                for (acc, x) in v_hat.iter_mut().zip(self.v.row(slot)) {
                    *acc += w * x;
                }
            }
            selections.push(sel);
        }
        Ok(RetrievalResult { selections, v_hat })
    }

    /// FNV-1a digest over config-relevant shape, step, all weight bits, and
    /// ledger length. Used by tests and the benchmark harness to assert that
    /// probing leaves state untouched.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.config.n_sub as u64);
        eat(self.config.heads as u64);
        eat(self.step);
        for m in self.k1.iter().chain(&self.k2).chain(std::iter::once(&self.v)) {
            for v in m.data() {
                eat((*v as f64).to_bits());
            }
        }
        eat(self.ledger.values().map(|r| r.len() as u64).sum());
        h
    }
}
