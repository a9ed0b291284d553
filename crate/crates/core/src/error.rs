use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient tail: need at least {needed} positive eigenvalues, found {found}")]
    InsufficientTail { needed: usize, found: usize },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Malformed binary input; `offset` is the byte position of the problem.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// Malformed text input; `line` is 1-based.
    #[error("format error on line {line}: {message}")]
    LineFormat { line: usize, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags or configuration values.
    Config,
    /// Unreadable, malformed or unusable input data.
    Data,
    /// A numerical routine failed.
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) => ErrorKind::Config,
            Error::NumericFailure(_) => ErrorKind::Numeric,
            Error::File { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    /// Attaches the file the error came from.
    pub fn at_path(self, path: impl Into<PathBuf>) -> Error {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The underlying error with any file context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }
}
