use thiserror::Error;

#[derive(Debug, Error)]
pub enum GastError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input too short: need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("mask row {0} has no nonzero entry")]
    EmptyMaskRow(usize),

    #[error("backward: {0}")]
    Backward(String),

    #[error("unknown skeleton {0:?}")]
    UnknownSkeleton(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("data: {0}")]
    Data(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GastError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(GastError::Shape(msg.into()))
}
