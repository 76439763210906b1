//! Crate-wide error type.
//!
//! Variants map onto the failure surfaces of the pipeline: reading data,
//! validating it, evaluating densities, running chains, and diagnosing
//! output. The CLI maps variants to process exit codes (see `cli`).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input that could not be read at all.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    /// Input that was readable but violates a dataset or model invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numeric argument outside the domain of the requested operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Chain initialization failed (no finite starting point found).
    #[error("initialization error: {0}")]
    Init(String),

    /// Convergence diagnostics could not be computed from the given draws.
    #[error("diagnostics error: {0}")]
    Diagnostics(String),

    /// Bad command-line usage (unknown flag, missing required argument).
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
