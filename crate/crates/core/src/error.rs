use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the clustering and selection routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("non-numeric value {value:?} at row {row}, column {column:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),

    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),

    #[error("column {0:?} has zero variance")]
    ZeroVariance(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("Manly transform overflows for x = {x}, lambda = {lambda}")]
    Overflow { x: f64, lambda: f64 },

    #[error("inverse Manly transform undefined for y = {y}, lambda = {lambda} (lambda*y + 1 <= 0)")]
    Domain { y: f64, lambda: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("all EM starts degenerated for G = {g}")]
    Degenerate { g: usize },

    #[error("objective is not finite at {at}")]
    NonFiniteObjective { at: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
