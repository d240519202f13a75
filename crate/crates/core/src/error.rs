//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

/// Errors raised by the estimation pipeline and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (pivot {pivot:.3e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("linear program is infeasible (phase-one residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error("simplex stopped after {iterations} pivots without reaching optimality")]
    IterationLimit { iterations: usize },

    #[error("simplex lost numerical stability: {0}")]
    Numerical(String),

    #[error("CLIME column {column}: {source}")]
    ClimeColumn {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("worker {worker_id}: {source}")]
    Worker {
        worker_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shard needs at least two rows per class (got n1 = {n1}, n2 = {n2})")]
    DegenerateShard { n1: usize, n2: usize },

    #[error("no worker messages to aggregate")]
    EmptyMessageSet,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("numeric column `{0}` has no observed values")]
    AllMissingColumn(String),

    #[error("too few rows: {0}")]
    TooFewRows(String),

    #[error("fold too small: {0}")]
    FoldTooSmall(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Strips worker / column annotations and returns the underlying cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Worker { source, .. } | Error::ClimeColumn { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
