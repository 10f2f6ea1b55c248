//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical blowup in {context} at step {step}")]
    NumericalBlowup { context: &'static str, step: usize },

    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("sampling produced a non-finite state at step {step}")]
    SamplingFailed { step: usize },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("parse error in {path} at offset {offset}: {reason}")]
    Parse {
        path: String,
        offset: u64,
        reason: String,
    },

    #[error("manifest verification failed: {0}")]
    Verify(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
