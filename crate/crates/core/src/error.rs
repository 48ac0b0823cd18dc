//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file was readable but not in the expected format.
    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    /// A value or configuration violates an invariant.
    #[error("{0}")]
    Invalid(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    /// A voxel label with no entry in the tissue table in use.
    #[error("label {0} has no tissue table entry")]
    UnknownLabel(u8),

    /// Operands whose shapes or counts do not line up.
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    /// A dataset entry failed; wraps the underlying error with its id.
    #[error("dataset entry {id}: {source}")]
    Entry {
        id: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
