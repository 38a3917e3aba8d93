use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("usage error: {0}")]
    Usage(String),

    /// A policy or value update produced a non-finite loss or gradient.
    /// Callers keep their previous parameters.
    #[error("update aborted: {0}")]
    AbortUpdate(String),

    #[error("unsupported objective count {0} for exact hypervolume (2..=4)")]
    UnsupportedDimension(usize),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical abort after {attempts} attempts: {reason}")]
    NumericalAbort { attempts: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
