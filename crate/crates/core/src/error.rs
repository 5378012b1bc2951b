use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AccaError {
    /// A precondition on an input value was violated (shape, symmetry, feasibility).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A user-supplied parameter is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    /// The optimizer produced a non-finite value.
    #[error("numerical abort at iteration {iteration}: {msg}")]
    Numerical { iteration: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, AccaError>;

pub(crate) fn contract(msg: impl Into<String>) -> AccaError {
    AccaError::Contract(msg.into())
}

pub(crate) fn parameter(msg: impl Into<String>) -> AccaError {
    AccaError::Parameter(msg.into())
}
