use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The SPN graph violates a structural requirement (cycle, dangling child,
    /// incomplete sum, non-decomposable product, ...).
    #[error("invalid SPN structure: {0}")]
    Structure(String),

    /// Caller-supplied data does not satisfy an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A model or signal is degenerate (all-zero weights, silent signal, ...).
    #[error("degenerate {0}")]
    Degenerate(String),

    #[error("training failed for speaker `{speaker}`: {reason}")]
    Training { speaker: String, reason: String },

    /// A model, feature or mask document could not be decoded.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported audio in {path}: {reason}")]
    Audio { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
