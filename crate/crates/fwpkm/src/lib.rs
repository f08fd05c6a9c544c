//! Fast-weight product-key memory: a large sparse key-value store whose
//! parameters are updated online by chunk-level gradient descent on a local
//! memorization objective.
//!
//! Slots form a Cartesian grid indexed by two small sub-key matrices, so
//! exact top-k retrieval never scores the full slot table. The value matrix
//! learns targets through gate-weighted MSE gradients with consensus
//! averaging across competing writes; the sub-key matrices adapt to the
//! query distribution through a marginal-entropy addressing loss. Brute
//! force and finite-difference oracles validate both paths, and a synthetic
//! needle-in-a-haystack benchmark exercises iterative re-memorization.

// `Real as f64` casts are same-type in the default build but required by the
// `f32` feature.
#![allow(clippy::unnecessary_cast)]

pub mod bench;
pub mod checks;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod layer;
pub mod numeric;
pub mod oracle;
pub mod pkm;
pub mod rng;
pub mod snapshot;
pub mod state;
pub mod update;

pub use config::{MemoryConfig, ScoreKind, Toggles};
pub use error::{Error, Result};
pub use numeric::{Matrix, Real};
pub use state::{MemoryState, RetrievalResult, WriteRecord};
pub use update::{ChunkBatch, UpdateReport};
