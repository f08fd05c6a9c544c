//! The full memory layer: slow-weight query/value/gate projections, lookahead
//! pairing with a cross-chunk carry, target normalization, gated output
//! interpolation with the value residual, an output transform, and chunk
//! orchestration.
//!
//! Slow weights here are loaded or randomly initialized constants; training
//! them is out of scope for this crate.

use crate::config::MemoryConfig;
use crate::error::{Error, Result};
use crate::numeric::{rms_norm, zscore, Matrix, Real, RMS_EPS, ZSCORE_EPS};
use crate::rng::stream_rng;
use crate::state::MemoryState;
use crate::update::{update_chunk, update_chunk_unbounded, ChunkBatch, UpdateReport};

use rand_distr::{Distribution, Normal};

/// Dense affine map `y = W x + b` with `W` of shape out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub weight: Matrix,
    pub bias: Vec<Real>,
}

impl LinearMap {
    pub fn apply(&self, x: &[Real]) -> Result<Vec<Real>> {
        if x.len() != self.weight.cols() {
            return Err(Error::dim("LinearMap::apply", self.weight.cols(), x.len()));
        }
        Ok((0..self.weight.rows())
            .map(|r| {
                self.weight
                    .row(r)
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<Real>()
                    + self.bias[r]
            })
            .collect())
    }
}

/// RMS normalization followed by a linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub gain: Vec<Real>,
    pub linear: LinearMap,
}

impl Projection {
    pub fn apply(&self, x: &[Real], eps: Real) -> Result<Vec<Real>> {
        let normed = rms_norm(x, &self.gain, eps)?;
        self.linear.apply(&normed)
    }
}

/// Slow weights of one layer: query, value, gate, and output projections.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub hidden: usize,
    pub rms_eps: Real,
    pub q: Projection,
    pub v: Projection,
    pub g: Projection,
    pub o: Projection,
}

impl LayerWeights {
    /// Random initialization: Gaussian `1/sqrt(fan_in)` weights, unit gains,
    /// zero biases. The query projection is scaled down to
    /// `1/sqrt(fan_in * fan_out)` so that projected queries come out at unit
    /// norm, the scale the sub-key initialization assumes. Deterministic in
    /// `seed`.
    pub fn init(hidden: usize, config: &MemoryConfig, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidArgument("hidden width must be >= 1".into()));
        }
        config.validate()?;
        let make = |name: &str, out_dim: usize, in_dim: usize, std: f64| -> Projection {
            let mut rng = stream_rng(seed, name, 0);
            let normal = Normal::new(0.0_f64, std).expect("positive std");
            let data: Vec<Real> = (0..out_dim * in_dim)
                .map(|_| normal.sample(&mut rng) as Real)
                .collect();
            Projection {
                gain: vec![1.0; in_dim],
                linear: LinearMap {
                    weight: Matrix::from_vec(out_dim, in_dim, data).expect("finite init"),
                    bias: vec![0.0; out_dim],
                },
            }
        };
        let fan = |d: usize| 1.0 / (d as f64).sqrt();
        let q_dim = config.query_dim();
        Ok(LayerWeights {
            hidden,
            rms_eps: RMS_EPS,
            q: make("layer-q", q_dim, hidden, 1.0 / ((hidden * q_dim) as f64).sqrt()),
            v: make("layer-v", config.value_dim, hidden, fan(hidden)),
            g: make("layer-g", 1, hidden, fan(hidden)),
            o: make("layer-o", hidden, config.value_dim, fan(config.value_dim)),
        })
    }

    /// Internal shape consistency (gains and biases match weight shapes, all
    /// input projections share the hidden width).
    pub fn validate_shapes(&self) -> Result<()> {
        for (name, p) in [("q", &self.q), ("v", &self.v), ("g", &self.g), ("o", &self.o)] {
            if p.gain.len() != p.linear.weight.cols() {
                return Err(Error::InvalidArgument(format!(
                    "{name} projection gain length does not match input width"
                )));
            }
            if p.linear.bias.len() != p.linear.weight.rows() {
                return Err(Error::InvalidArgument(format!(
                    "{name} projection bias length does not match output width"
                )));
            }
        }
        for (name, p) in [("q", &self.q), ("v", &self.v), ("g", &self.g)] {
            if p.linear.weight.cols() != self.hidden {
                return Err(Error::InvalidArgument(format!(
                    "{name} projection input width does not match hidden width"
                )));
            }
        }
        if self.o.linear.weight.rows() != self.hidden {
            return Err(Error::InvalidArgument(
                "output projection must map back to the hidden width".into(),
            ));
        }
        if self.g.linear.weight.rows() != 1 {
            return Err(Error::InvalidArgument(
                "gate projection must emit a scalar".into(),
            ));
        }
        Ok(())
    }

    /// Shape compatibility against a memory configuration.
    pub fn validate_for(&self, config: &MemoryConfig) -> Result<()> {
        self.validate_shapes()?;
        if self.q.linear.weight.rows() != config.query_dim() {
            return Err(Error::ConfigMismatch(format!(
                "query projection emits {}, memory expects {}",
                self.q.linear.weight.rows(),
                config.query_dim()
            )));
        }
        if self.v.linear.weight.rows() != config.value_dim {
            return Err(Error::ConfigMismatch(format!(
                "value projection emits {}, memory expects {}",
                self.v.linear.weight.rows(),
                config.value_dim
            )));
        }
        if self.o.linear.weight.cols() != config.value_dim {
            return Err(Error::ConfigMismatch(
                "output projection input width must equal the value width".into(),
            ));
        }
        Ok(())
    }
}

fn sigmoid(x: Real) -> Real {
    1.0 / (1.0 + (-x).exp())
}

/// Project a hidden state into (query, value, gate). The raw gate scalar is
/// squashed to (0, 1) with the logistic function; with gating off the gate
/// is fixed at zero and unused downstream.
pub fn project_inputs(
    weights: &LayerWeights,
    config: &MemoryConfig,
    h: &[Real],
) -> Result<(Vec<Real>, Vec<Real>, Real)> {
    if h.len() != weights.hidden {
        return Err(Error::dim("project_inputs", weights.hidden, h.len()));
    }
    let q = weights.q.apply(h, weights.rms_eps)?;
    let v = weights.v.apply(h, weights.rms_eps)?;
    let g = if config.toggles.gating {
        sigmoid(weights.g.apply(h, weights.rms_eps)?[0])
    } else {
        0.0
    };
    Ok((q, v, g))
}

/// Per-token layer output.
#[derive(Debug, Clone)]
pub struct TokenOutput {
    /// Final output after the output transform.
    pub output: Vec<Real>,
    /// Gated interpolation of memory prediction and value residual (the
    /// pre-transform output).
    pub interpolated: Vec<Real>,
    pub gate: Real,
}

#[derive(Debug, Clone)]
struct Carry {
    query: Vec<Real>,
    gate: Real,
    tag: String,
}

/// Streaming layer state: the memory plus the lookahead carry and the
/// pending chunk buffer. Single-threaded during a stream; distinct states
/// may run in parallel.
#[derive(Debug)]
pub struct LayerState {
    pub memory: MemoryState,
    carry: Option<Carry>,
    pending: ChunkBatch,
    /// Reports of chunk updates triggered mid-stream, in order.
    pub reports: Vec<UpdateReport>,
}

impl LayerState {
    pub fn new(memory: MemoryState) -> Self {
        LayerState {
            memory,
            carry: None,
            pending: ChunkBatch::default(),
            reports: Vec::new(),
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn has_carry(&self) -> bool {
        self.carry.is_some()
    }

    /// Pending (query, target) pairs, exposed for inspection in tests.
    pub fn pending_pairs(&self) -> impl Iterator<Item = (&[Real], &[Real])> {
        self.pending
            .queries
            .iter()
            .map(|q| q.as_slice())
            .zip(self.pending.targets.iter().map(|t| t.as_slice()))
    }

    /// Process one token: project, retrieve, interpolate, transform, and
    /// buffer the lookahead pair. Triggers a chunk update when the buffer
    /// reaches the configured chunk size.
    pub fn forward_token(
        &mut self,
        weights: &LayerWeights,
        h: &[Real],
        tag: &str,
    ) -> Result<TokenOutput> {
        let config = self.memory.config().clone();
        let (q, v, g) = project_inputs(weights, &config, h)?;
        let retrieval = self.memory.retrieve(&q)?;
        let v_hat = retrieval.v_hat;

        let interpolated: Vec<Real> = if config.toggles.gating {
            v_hat
                .iter()
                .zip(&v)
                .map(|(vh, vr)| g * vh + (1.0 - g) * vr)
                .collect()
        } else {
            v_hat.iter().zip(&v).map(|(vh, vr)| vh + vr).collect()
        };
        let output = weights.o.apply(&interpolated, weights.rms_eps)?;

        let target = if config.toggles.value_norm {
            zscore(&v, ZSCORE_EPS)?
        } else {
            v
        };
        let loss_gate = if config.toggles.gating { g } else { 1.0 };

        if config.toggles.lookahead {
            if let Some(carry) = self.carry.take() {
                self.pending.push(carry.query, target, carry.gate, carry.tag);
            }
            self.carry = Some(Carry {
                query: q,
                gate: loss_gate,
                tag: tag.to_string(),
            });
        } else {
            self.pending.push(q, target, loss_gate, tag.to_string());
        }

        if self.pending.len() >= config.chunk_size {
            let chunk = std::mem::take(&mut self.pending);
            let report = update_chunk(&mut self.memory, &chunk)?;
            self.reports.push(report);
        }

        Ok(TokenOutput {
            output,
            interpolated,
            gate: g,
        })
    }

    /// End-of-sequence: update on whatever is buffered and discard the final
    /// carried query (it has no lookahead target).
    pub fn flush(&mut self) -> Result<Option<UpdateReport>> {
        self.carry = None;
        if self.pending.is_empty() {
            return Ok(None);
        }
        let chunk = std::mem::take(&mut self.pending);
        let report = update_chunk(&mut self.memory, &chunk)?;
        Ok(Some(report))
    }

    /// Re-memorization: run the same token stream `n` times with the chunk
    /// boundary at the stream end, one memory update per pass. Requires an
    /// empty buffer (no half-processed stream).
    pub fn reprocess(
        &mut self,
        weights: &LayerWeights,
        stream: &[Vec<Real>],
        n: usize,
    ) -> Result<Vec<UpdateReport>> {
        if n == 0 {
            return Err(Error::InvalidArgument("reprocess needs n >= 1".into()));
        }
        if !self.pending.is_empty() || self.carry.is_some() {
            return Err(Error::InvalidArgument(
                "reprocess requires an empty pending buffer".into(),
            ));
        }
        let config = self.memory.config().clone();
        let mut reports = Vec::with_capacity(n);
        for _ in 0..n {
            let mut chunk = ChunkBatch::default();
            let mut carry: Option<Carry> = None;
            for (i, h) in stream.iter().enumerate() {
                let (q, v, g) = project_inputs(weights, &config, h)?;
                let target = if config.toggles.value_norm {
                    zscore(&v, ZSCORE_EPS)?
                } else {
                    v
                };
                let loss_gate = if config.toggles.gating { g } else { 1.0 };
                let tag = format!("t{i}");
                if config.toggles.lookahead {
                    if let Some(c) = carry.take() {
                        chunk.push(c.query, target, c.gate, c.tag);
                    }
                    carry = Some(Carry {
                        query: q,
                        gate: loss_gate,
                        tag,
                    });
                } else {
                    chunk.push(q, target, loss_gate, tag);
                }
            }
            if chunk.is_empty() {
                return Err(Error::InvalidArgument(
                    "stream too short to form any (query, target) pair".into(),
                ));
            }
            reports.push(update_chunk_unbounded(&mut self.memory, &chunk)?);
        }
        Ok(reports)
    }
}
