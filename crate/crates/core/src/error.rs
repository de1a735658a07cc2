use std::path::PathBuf;

/// Error type shared by the whole crate.
///
/// I/O, validation and numerical failures are kept as distinct variants so
/// callers (in particular the CLI) can map them to distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad header in {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("index {index} out of range (extent {extent})")]
    IndexOutOfRange { index: usize, extent: usize },

    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
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
