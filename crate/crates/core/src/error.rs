use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown label column `{0}`")]
    UnknownLabelColumn(String),
    #[error("label column is not binary: {0}")]
    NonBinaryLabel(String),
    #[error("non-numeric or non-finite value `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("dataset was already transformed by a different binning rule")]
    AlreadyBinned,
    #[error("feature {0} is owned by more than one peer or is shared")]
    OverlappingFeatures(usize),
    #[error("peer {peer} replied with {got} coordinates, expected {expected}")]
    ReplyDimension {
        peer: usize,
        expected: usize,
        got: usize,
    },
    #[error("{0} examples is too many for exhaustive rado enumeration (max {max})", max = crate::rado::MAX_ENUMERATION_SIZE)]
    TooManyExamples(usize),
    #[error("linear system is not positive definite after jitter escalation")]
    NotPositiveDefinite,
    #[error("linear solve residual {0:e} exceeds tolerance")]
    IllConditioned(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("only one class present in {0}")]
    SingleClass(String),
    #[error("config error: {0}")]
    Config(String),
}
