use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong length/shape for an operation.
    #[error("{context}: dimension mismatch (expected {expected}, got {got})")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An argument was out of range or otherwise unusable.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A NaN/Inf showed up where a finite value is required. Updates that
    /// would write non-finite values abort without touching state.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Snapshot/ledger bytes were corrupted, truncated, or from an
    /// unsupported format version.
    #[error("storage format error: {0}")]
    Storage(String),

    /// A snapshot was valid but does not match the expected configuration.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
