//! Error taxonomy shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A structural problem in a configuration or a network definition.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API contract violation (bad argument, stale tape, out-of-range label).
    #[error("usage error: {0}")]
    Usage(String),

    /// A numerical diagnostic (non-finite loss, degenerate input).
    #[error("diagnostic: {0}")]
    Diagnostic(String),

    /// Parse failure in a text input, with location.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// I/O failure with the offending path attached.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
