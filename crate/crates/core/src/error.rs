use thiserror::Error;

use crate::keyframes::vlm::VlmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("diffusion step {step} outside 1..={n_steps}")]
    InvalidStep { step: usize, n_steps: usize },

    #[error("variance at index {index} is not strictly positive")]
    NonPositiveVariance { index: usize },

    #[error("invalid mixture model: {0}")]
    InvalidModel(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),

    #[error("invalid keyframe: {0}")]
    InvalidKeyframe(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("no rule matches instruction {instruction:?} in environment {env:?}")]
    NoRule { env: String, instruction: String },

    #[error("frame kind {kind} is not supported by environment {env:?}")]
    UnsupportedFrameKind { kind: String, env: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Vlm(#[from] VlmError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}
