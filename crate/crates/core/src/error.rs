use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("truncated payload: needed {needed} bytes, {available} available")]
    TruncatedPayload { needed: u64, available: u64 },

    #[error("inconsistent header: {0}")]
    Inconsistent(String),

    #[error("non-finite component at index {index}")]
    NonFinite { index: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("capacity exceeded: {required} bytes required, {available} bytes available")]
    Capacity { required: u64, available: u64 },

    #[error("address out of range: {0}")]
    AddressOutOfRange(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("query {query_id} has zero norm; cosine scoring is undefined")]
    ZeroNormQuery { query_id: u64 },

    #[error("query ids missing from qrels: {0:?}")]
    UnknownQueries(Vec<u64>),

    #[error("infeasible calibration: {0}")]
    Infeasible(String),

    #[error("missing counter: {0}")]
    MissingCounter(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code for each error class.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidInput(_) | Error::AddressOutOfRange(_) => 2,
            Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::TruncatedPayload { .. }
            | Error::Inconsistent(_)
            | Error::Parse { .. }
            | Error::NonFinite { .. } => 3,
            Error::Capacity { .. } => 4,
            Error::Io { .. } => 5,
            Error::DimensionMismatch { .. } | Error::ZeroNormQuery { .. } => 6,
            Error::UnknownQueries(_) => 7,
            Error::Infeasible(_) | Error::MissingCounter(_) => 8,
        }
    }
}
