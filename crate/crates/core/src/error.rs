//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by gallery construction, inference, ranking and the
/// evaluation harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two paired objects disagree (gallery vs. probe, state vs.
    /// gallery, matrix vs. labels).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A matrix or vector contains NaN or infinite entries where finite
    /// values are required.
    #[error("non-finite entry: {0}")]
    NonFinite(String),

    /// Empty input where at least one element is required.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A subject id is outside the gallery's label range or was already
    /// removed.
    #[error("subject absent: {0}")]
    SubjectAbsent(String),

    /// A configuration value violates its documented invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Numerical failure during inference (singular system or non-finite
    /// state), reported with the iteration at which it was detected.
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    /// Malformed CSV or JSON input.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
