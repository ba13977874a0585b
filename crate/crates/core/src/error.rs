use std::path::PathBuf;

use corridor_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("gridlock at t = {time:.1} s: no vehicle moved for {cycles} cycles ({vehicles} vehicles on network)")]
    Gridlock {
        time: f64,
        cycles: usize,
        vehicles: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("{path}: record {record} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        record: usize,
        offset: u64,
        message: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Data(_)
            | Error::Parse { .. }
            | Error::InsufficientData(_)
            | Error::UndefinedMetric(_) => ErrorKind::Data,
            Error::Numeric(_) | Error::Tensor(_) | Error::Gridlock { .. } => ErrorKind::Numeric,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
