use thiserror::Error;

use crate::prior::PriorError;
use crate::wav::WavError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The input is well-formed but carries no usable information
    /// (all-zero mixture, constant signal, zero filter).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite state at sampling step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error(transparent)]
    Wav(#[from] WavError),

    #[error("score prior failed at step {step} (sigma = {sigma}): {source}")]
    Prior {
        step: usize,
        sigma: f64,
        #[source]
        source: PriorError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}
