use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("invalid label: {0:?}")]
    InvalidLabel(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn category(id: impl Into<String>) -> Self {
        Error::NotFound {
            kind: "category",
            id: id.into(),
        }
    }

    pub(crate) fn entity(id: impl Into<String>) -> Self {
        Error::NotFound {
            kind: "entity",
            id: id.into(),
        }
    }

    /// Short machine-readable tag, used for structured error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::NotFound { .. } => "not_found",
            Error::Conflict(_) => "conflict",
            Error::InvalidLabel(_) => "invalid_label",
            Error::Contract(_) => "contract",
            Error::Training(_) => "training",
            Error::Insufficient(_) => "insufficient_data",
            Error::Format { .. } => "format",
        }
    }
}
