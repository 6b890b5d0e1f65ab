use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bucket count mismatch: {left} vs {right}")]
    BucketMismatch { left: usize, right: usize },

    #[error("{what} digest mismatch: expected {expected}, found {found}")]
    DigestMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("document id not found in corpus: {0}")]
    MissingId(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl ToString) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.to_string(),
        }
    }
}
