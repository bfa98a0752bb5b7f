use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: entry {index} = {value} is outside the valid domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error at line {line}: label {found} disagrees with oracle label {expected}")]
    Integrity {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at batch {batch}; parameter norms: {norms}")]
    NonFinite { batch: usize, norms: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 failed check, 2 usage or configuration, 3 I/O or file content.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain { .. } | Error::NonFinite { .. } => 1,
            Error::Config(_) | Error::Contract(_) | Error::Shape { .. } => 2,
            Error::Io { .. } | Error::Parse { .. } | Error::Integrity { .. } | Error::Json(_) => 3,
        }
    }
}
