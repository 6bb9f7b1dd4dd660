use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("taxonomy error: {0}")]
    Taxonomy(String),
    #[error("parse error at line {line}: {msg}")]
    ParseLine { line: usize, msg: String },
    #[error("parse error at byte {offset}: {msg}")]
    ParseByte { offset: usize, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Distinct failure modes when reading a checkpoint file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file at byte {0}")]
    Truncated(usize),
    #[error("shape conflict for {name}: checkpoint {stored:?}, model {expected:?}")]
    ShapeConflict {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("malformed entry at byte {offset}: {msg}")]
    Malformed { offset: usize, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Dimension(_) => 1,
            Error::Data(_)
            | Error::Taxonomy(_)
            | Error::ParseLine { .. }
            | Error::ParseByte { .. }
            | Error::Checkpoint(_)
            | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }
}

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
pub(crate) use dim_err;
