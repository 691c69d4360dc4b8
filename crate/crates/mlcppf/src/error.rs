//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by dataset handling, model fitting, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or catalog dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A similarity row has no positive distance to normalize by.
    #[error("row {row} of the {metric} distance matrix is all zeros; similarity is undefined")]
    ZeroDistanceRow { metric: &'static str, row: usize },

    /// Neighborhood size too large for the known-area pool.
    #[error("k = {k} but only {known} known areas are available (need k < {known})")]
    NeighborhoodTooLarge { k: usize, known: usize },

    /// A loss or gradient evaluation produced a non-finite value.
    #[error("non-finite value in {context} at iteration {iteration}; reduce the step size")]
    NonFinite { context: &'static str, iteration: usize },

    /// The pseudo-inverse decomposition did not converge.
    #[error("pseudo-inverse failed: SVD did not converge")]
    DecompositionFailed,

    /// Metric evaluated over an empty entry set.
    #[error("no entries selected for evaluation")]
    EmptyEvaluation,

    /// NRMSE normalization is undefined on constant ground truth.
    #[error("ground-truth range is zero over the evaluation set; NRMSE is undefined")]
    ZeroRange,

    /// Dataset invariants are violated; the report lists each violation.
    #[error("dataset validation failed:\n{0}")]
    Validation(String),

    /// A precondition on operation arguments failed.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Underlying I/O failure.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV parse or write failure.
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON (de)serialization failure.
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed input file contents.
    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
