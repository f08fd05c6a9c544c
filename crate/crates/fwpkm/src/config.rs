//! Memory configuration: sizes, update hyperparameters, and ablation toggles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Real;

/// Query-key scoring function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Inverse-distance-weight score `-log(eps + ||q - K_i||^2)`. Pulls keys
    /// toward query-cluster centroids; the default.
    Idw,
    /// Plain dot-product score `q . K_i`.
    Dot,
}

/// Ablation toggles. All on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    /// Z-score normalize target values on the feature dimension.
    pub value_norm: bool,
    /// Update keys with the marginal-entropy addressing loss. When off, keys
    /// are updated by the MSE gradient flowing through the retrieval softmax.
    pub addressing_loss: bool,
    /// Interpolate the layer output between the memory prediction and the
    /// value residual with a learned gate. When off, the output is their sum
    /// and the memorization loss is unweighted.
    pub gating: bool,
    /// Weight each token's memorization loss by its gate.
    pub loss_weighting: bool,
    /// Pair each query with the next token's value instead of its own.
    pub lookahead: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            value_norm: true,
            addressing_loss: true,
            gating: true,
            loss_weighting: true,
            lookahead: true,
        }
    }
}

/// All hyperparameters of one memory instance.
///
/// `n_sub` is the per-matrix sub-key count, so the memory holds
/// `n_sub * n_sub` addressable slots. `key_dim` is the per-head query/key
/// width; each sub-key row has width `key_dim / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub n_sub: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub heads: usize,
    pub top_k: usize,
    pub chunk_size: usize,
    pub eps_idw: Real,
    pub addr_weight: Real,
    pub lr: Real,
    pub score_kind: ScoreKind,
    pub toggles: Toggles,
    /// Record per-slot write provenance. Required by retrieval tracing.
    pub track_ledger: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            n_sub: 512,
            key_dim: 512,
            value_dim: 512,
            heads: 1,
            top_k: 8,
            chunk_size: 512,
            eps_idw: 1e-3,
            addr_weight: 10.0,
            lr: 1.0,
            score_kind: ScoreKind::Idw,
            toggles: Toggles::default(),
            track_ledger: true,
        }
    }
}

impl MemoryConfig {
    /// Total number of addressable slots.
    pub fn n_slots(&self) -> usize {
        self.n_sub * self.n_sub
    }

    /// Width of one sub-key row.
    pub fn sub_key_dim(&self) -> usize {
        self.key_dim / 2
    }

    /// Width of a full multi-head query.
    pub fn query_dim(&self) -> usize {
        self.heads * self.key_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be >= 1".into()));
        }
        if self.n_sub < self.top_k {
            return Err(Error::InvalidArgument(format!(
                "n_sub ({}) must be >= top_k ({})",
                self.n_sub, self.top_k
            )));
        }
        if self.key_dim == 0 || !self.key_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "key_dim ({}) must be positive and even",
                self.key_dim
            )));
        }
        if self.value_dim == 0 {
            return Err(Error::InvalidArgument("value_dim must be >= 1".into()));
        }
        if self.heads == 0 {
            return Err(Error::InvalidArgument("heads must be >= 1".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidArgument("chunk_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lr ({}) must be positive and finite",
                self.lr
            )));
        }
        if !(self.eps_idw > 0.0 && self.eps_idw.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eps_idw ({}) must be positive and finite",
                self.eps_idw
            )));
        }
        if !(self.addr_weight >= 0.0 && self.addr_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "addr_weight ({}) must be non-negative and finite",
                self.addr_weight
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = MemoryConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_slots(), 512 * 512);
        assert_eq!(cfg.top_k, 8);
        assert_eq!(cfg.heads, 1);
        assert_eq!(cfg.chunk_size, 512);
        assert_eq!(cfg.addr_weight, 10.0);
        assert_eq!(cfg.eps_idw, 1e-3);
        assert_eq!(cfg.lr, 1.0);
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let bad = [
            MemoryConfig {
                top_k: 0,
                ..MemoryConfig::default()
            },
            MemoryConfig {
                top_k: 513,
                ..MemoryConfig::default()
            },
            MemoryConfig {
                key_dim: 7,
                ..MemoryConfig::default()
            },
            MemoryConfig {
                lr: 0.0,
                ..MemoryConfig::default()
            },
            MemoryConfig {
                eps_idw: -1.0,
                ..MemoryConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
