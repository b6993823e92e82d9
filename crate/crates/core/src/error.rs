use thiserror::Error;

/// Unified error type for the crate. Numerical ops fail fast and loud:
/// a non-finite value anywhere is an error, never a silent NaN.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-finite value in tensor of shape {shape:?}")]
    NonFinite { op: &'static str, shape: Vec<usize> },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty prefix has no partition")]
    EmptyPrefix,
    #[error("level {level} is inactive at n={n}")]
    InactiveLevel { level: usize, n: usize },
    #[error("memory is full: {n} tokens absorbed, capacity {capacity}")]
    MemoryFull { n: usize, capacity: usize },
    #[error("no supervised positions")]
    EmptyMask,
    #[error("token id {id} out of range for vocab {vocab} at position {position}")]
    TokenOutOfRange {
        position: usize,
        id: usize,
        vocab: usize,
    },
    #[error("sequence length {t} exceeds maximum {t_max}")]
    SequenceTooLong { t: usize, t_max: usize },
    #[error("backward target must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("tape already consumed by backward; call reset() first")]
    TapeConsumed,
    #[error("function is not deterministic: two evaluations gave {a} and {b}")]
    NonDeterministic { a: f64, b: f64 },
    #[error("non-finite gradient for parameter {name} at step {step}")]
    NonFiniteGrad { name: String, step: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
