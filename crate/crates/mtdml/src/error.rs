//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violated a precondition (empty batch, non-finite input, ...).
    #[error("invalid argument: {0}")]
    Validation(String),

    /// A file did not match its declared format (bad magic, truncation, ...).
    #[error("format error: {0}")]
    Format(String),

    /// A transform removed too many samples to be usable for retraining.
    #[error("transform too aggressive: kept {kept:.3} of samples, required {min_keep:.3}")]
    TransformTooAggressive { kept: f64, min_keep: f64 },

    /// Student generation could not satisfy the accuracy gate.
    #[error("student generation failed: {0}")]
    GenerationFailure(String),

    /// The standby-pool buffer was empty when a swap was required.
    #[error("pool buffer underrun: no standby pool available at renewal")]
    BufferUnderrun,

    /// The pool manager was asked to do something its state cannot support.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A metric has no defined value for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// An evaluation aborted partway through; earlier rows were completed.
    #[error("evaluation incomplete after {completed}/{total} rows: {reason}")]
    PartialResults {
        completed: usize,
        total: usize,
        reason: String,
    },

    /// A remote prediction endpoint misbehaved.
    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
