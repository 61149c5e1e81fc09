//! Error types shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by framecast operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition (shape mismatch,
    /// out-of-range value, empty input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration is internally inconsistent or references something
    /// that does not exist.
    #[error("configuration error: {0}")]
    Config(String),

    /// Filesystem or decoding failure, naming the offending path.
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },

    /// A numerical routine left its domain of validity (e.g. a covariance
    /// that is not positive semi-definite beyond tolerance).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Io {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
