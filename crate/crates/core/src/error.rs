use std::path::PathBuf;

/// Errors raised across the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("clip has {frames} frame(s), need at least {needed}")]
    TooFewFrames { frames: usize, needed: usize },

    #[error("frame index {index} out of range for clip of {frames} frames")]
    FrameIndex { index: usize, frames: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("zero-norm embedding row {0}")]
    ZeroNorm(usize),

    #[error("tape was recorded against parameter version {tape}, parameters are at version {params}")]
    StaleTape { tape: u64, params: u64 },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
