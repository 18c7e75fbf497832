use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimator, its diagnostics, and the artifact readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model field `{field}`: {reason}")]
    InvalidModel { field: &'static str, reason: String },

    #[error("dimension mismatch in `{what}`: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("log-likelihood decreased at iteration {iter}: {before} -> {after}")]
    NonMonotone { iter: usize, before: f64, after: f64 },

    #[error("size cap exceeded: {what} = {value} > {cap}")]
    SizeCap {
        what: &'static str,
        value: usize,
        cap: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn mismatch(
        what: &'static str,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for failures that come from the numerics rather than bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_) | Error::NonMonotone { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
