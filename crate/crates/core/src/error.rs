use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range [0, {bound}) at position {position}")]
    Index {
        index: usize,
        bound: usize,
        position: usize,
    },

    #[error("empty sequence: every step of row {row} is masked")]
    EmptySequence { row: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 usage, 3 data format, 4 numeric or contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Format { .. } | Error::Io { .. } | Error::Lookup(_) => 3,
            Error::Dimension { .. }
            | Error::Index { .. }
            | Error::EmptySequence { .. }
            | Error::Config(_)
            | Error::Contract(_) => 4,
        }
    }
}
