//! Crate-wide error type.

use thiserror::Error;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Tensor shapes incompatible for the attempted operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A numeric value that must be finite was not.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// An index (e.g. a class label) outside its valid range.
    #[error("index out of range in {op}: {index} not in [0, {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    /// Operation attempted in an invalid engine state
    /// (e.g. reading gradients before a backward pass).
    #[error("invalid state: {0}")]
    InvalidState(&'static str),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A channel vector was zero (or numerically degenerate).
    #[error("degenerate channel: worker {worker} has a zero channel vector")]
    DegenerateChannel { worker: usize },

    /// A CSI row sum was not strictly positive, so the degree
    /// normalization is undefined.
    #[error("degenerate graph: row {row} of the CSI matrix has nonpositive sum {sum}")]
    DegenerateGraph { row: usize, sum: f64 },

    /// A policy was given an input size it cannot handle.
    #[error("dimension error: policy expects L = {expected}, got L = {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A policy kind is not supported by the requested operation.
    #[error("unsupported policy for this operation: {0}")]
    UnsupportedPolicy(String),

    /// Not enough data to satisfy a request.
    #[error("data error: need at least {needed} samples, have {available}")]
    InsufficientData { needed: usize, available: usize },

    /// A binary file did not start with the expected magic value.
    #[error("format error in {path}: expected magic {expected:#010x}, observed {observed:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        observed: u32,
    },

    /// Paired files disagree on their item counts.
    #[error("consistency error: image count {images} != label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    /// A file payload ended before the declared length.
    #[error("length error in {path}: expected {expected} bytes of payload, got {got}")]
    Truncated {
        path: String,
        expected: usize,
        got: usize,
    },

    /// Training diverged (validation metric collapsed for too long).
    #[error(
        "divergence: validation metric {current} exceeded 10x its best {best} \
         for {patience} consecutive epochs"
    )]
    Divergence {
        current: f64,
        best: f64,
        patience: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
