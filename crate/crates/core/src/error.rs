//! Error type shared by every stage of the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("factorization failed at pivot {pivot}: {msg}")]
    Factorization { pivot: usize, msg: String },

    #[error("point {index} lies outside the mesh")]
    Location { index: usize },

    #[error("size error: {0}")]
    Size(String),

    #[error("rational approximation error: {0}")]
    Approximation(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("no convergence after {iterations} iterations (last change {last_change:.3e})")]
    Convergence {
        iterations: usize,
        last_change: f64,
        trajectory: Vec<f64>,
    },

    #[error("regression error: {0}")]
    Regression(String),

    #[error("interpolation error: {0}")]
    Interpolation(String),

    #[error("threshold error: {0}")]
    Threshold(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. }
                | Error::Approximation(_)
                | Error::Optimization(_)
                | Error::Convergence { .. }
                | Error::Regression(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
