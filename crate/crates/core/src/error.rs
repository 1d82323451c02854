use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: token id {value} does not fit in 32 bits")]
    TokenRange { line: usize, value: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error("malformed store: {0}")]
    Format(String),

    #[error("corrupt entry in bucket {bucket} at offset {offset}: {message}")]
    Integrity {
        bucket: u64,
        offset: u64,
        message: String,
    },

    #[error("corpus does not match store: corpus hash {corpus:#018x}, store hash {store:#018x}")]
    CorpusMismatch { corpus: u64, store: u64 },

    #[error("config: {0}")]
    Config(String),

    #[error("verifier protocol violation: {0}")]
    Protocol(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Argument(_) | Error::Config(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
