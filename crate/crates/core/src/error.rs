//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON. The serde message carries line and column context.
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    /// Input violates a documented precondition (bad score, unknown id,
    /// out-of-range parameter, ...).
    #[error("{0}")]
    Validation(String),

    /// The requested quantity does not exist on this input, e.g. a
    /// calibration error over an empty detection set.
    #[error("{0}")]
    Undefined(String),

    #[error("matches were computed at tau = {matches_tau} but tau = {requested_tau} was requested")]
    TauMismatch { matches_tau: f64, requested_tau: f64 },

    /// A numeric fit failed in a way that retrying with the same input will
    /// not cure.
    #[error("optimization failed: {0}")]
    Optimization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
