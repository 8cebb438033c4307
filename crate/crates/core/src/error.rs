use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "matrix is not positive definite (pivot {pivot} at index {index}, tolerance {tolerance})"
    )]
    NotPositiveDefinite {
        index: usize,
        pivot: f64,
        tolerance: f64,
    },

    #[error("argument {value} outside the domain of {function}")]
    Domain { function: &'static str, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in row {row}")]
    NonFiniteInput { row: usize },

    #[error("row {row} does not start with the intercept value 1")]
    MissingIntercept { row: usize },

    #[error("block contains no observations")]
    EmptyBlock,

    #[error("insufficient data: n = {n} but a model has {params} parameters")]
    InsufficientData { n: u64, params: usize },

    #[error("{p} covariates exceeds the enumeration cap of {cap}")]
    TooManyCovariates { p: usize, cap: usize },

    #[error("no inputs supplied")]
    EmptyInput,

    #[error("iteration did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("coefficient norm {norm:.3e} diverged; the data look separable")]
    SeparationDetected { norm: f64 },

    #[error("subsample size {m} is below the estimator's minimum support {min}")]
    SubsampleTooSmall { m: usize, min: usize },

    #[error("simulation replicate {index} failed: {source}")]
    Replicate {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("estimator failed on subsample {index}: {source}")]
    Estimator {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("source yielded {found} rows on pass {pass}, expected {expected}")]
    SourceExhaustedEarly {
        pass: usize,
        expected: u64,
        found: u64,
    },

    #[error("column `{column}` not found in header of {path}")]
    HeaderMismatch { path: PathBuf, column: String },

    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_)
            | Error::TooManyCovariates { .. }
            | Error::SubsampleTooSmall { .. } => ErrorKind::Config,
            Error::NotPositiveDefinite { .. }
            | Error::Domain { .. }
            | Error::InsufficientData { .. }
            | Error::NonConvergence { .. }
            | Error::SeparationDetected { .. } => ErrorKind::Numerical,
            Error::Estimator { source, .. } | Error::Replicate { source, .. } => source.kind(),
            Error::DimensionMismatch { .. }
            | Error::NonFiniteInput { .. }
            | Error::MissingIntercept { .. }
            | Error::EmptyBlock
            | Error::EmptyInput
            | Error::SourceExhaustedEarly { .. }
            | Error::HeaderMismatch { .. }
            | Error::MalformedRow { .. }
            | Error::Snapshot(_)
            | Error::Csv(_)
            | Error::Io(_) => ErrorKind::Data,
        }
    }
}
