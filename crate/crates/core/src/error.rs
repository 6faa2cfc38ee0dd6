use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has (near) zero norm")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is singular (pivot {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("could not place prototype for class {class} after {attempts} attempts; dimension too small for the class count")]
    PrototypeSeparationFailure { class: usize, attempts: usize },

    #[error("frequency band {band} holds {available} classes, {requested} requested")]
    BandTooSmall {
        band: String,
        available: usize,
        requested: usize,
    },

    #[error("need at least {needed} classes, have {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("unknown class id {0}")]
    UnknownClass(u32),

    #[error(
        "loss became non-finite at epoch {epoch}; learning rate {learning_rate} is likely too high"
    )]
    NonFiniteLoss { epoch: usize, learning_rate: f64 },

    #[error("statistics list is empty")]
    EmptyStats,

    #[error("need at least {needed} samples per group, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("unknown pair id {0:?}")]
    UnknownPairId(String),

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("embedding space must contain at least one pair")]
    EmptySpace,

    #[error("user registry is empty")]
    EmptyRegistry,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
