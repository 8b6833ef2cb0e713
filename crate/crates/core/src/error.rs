use std::path::PathBuf;

use thiserror::Error;

use crate::timeseries::MonthStamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("incomplete month {month} in {variable}: {present} of {expected} days present")]
    IncompleteMonth {
        variable: String,
        month: MonthStamp,
        present: usize,
        expected: usize,
    },
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(String),
    #[error("series {0} has zero variance")]
    ZeroVariance(String),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("variable {0} not present")]
    MissingVariable(String),
    #[error("duplicate variable {0}")]
    DuplicateVariable(String),
    #[error("missing value in {variable} at {month}")]
    MissingValue { variable: String, month: MonthStamp },
    #[error("series do not overlap")]
    EmptyIntersection,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("all samples are zero")]
    AllZero,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("input out of range: {0}")]
    OutOfRange(String),
    #[error("timestamp mismatch at position {0}")]
    TimestampMismatch(usize),
    #[error("all weights are zero")]
    ZeroWeights,
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::ZeroVariance(_)
            | Error::AllZero
            | Error::NonFinite(_)
            | Error::ZeroWeights
            | Error::Numeric(_) => ErrorKind::Numeric,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
