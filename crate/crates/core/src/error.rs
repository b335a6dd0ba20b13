//! Shared error type for the crate.

use thiserror::Error;

/// Errors produced by dataset I/O, network construction, training, and
/// calibrator fitting.
#[derive(Debug, Error)]
pub enum Error {
    /// A file did not match its declared on-disk format (bad magic bytes,
    /// truncated payload, malformed CSV header, invalid JSON, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Inputs violated a documented invariant or precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// An underlying I/O operation failed.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate})")]
    TrainingDiverged { epoch: usize, learning_rate: f64 },

    /// An operation was called on an object in the wrong state, e.g.
    /// transforming through an unfitted calibrator.
    #[error("state error: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
