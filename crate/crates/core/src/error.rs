use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// The observed path carries no information (a zero denominator).
    #[error("degenerate path: {0}")]
    DegeneratePath(String),

    #[error("insufficient data: need at least {needed} increments, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty session: {0}")]
    EmptySession(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegeneratePath(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that describe the data rather than the caller's setup.
    pub fn is_path_level(&self) -> bool {
        matches!(
            self,
            Error::DegeneratePath(_) | Error::InsufficientData { .. }
        )
    }
}
