use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported Hermite degree {degree} (cap is {cap})")]
    UnsupportedDegree { degree: usize, cap: usize },

    #[error("quadrature did not converge: successive estimates differ by {diff:e}")]
    Quadrature { diff: f64 },

    #[error("Monte-Carlo standard error {achieved:e} exceeds requested tolerance {requested:e}")]
    Accuracy { achieved: f64, requested: f64 },

    #[error("overlaps ({alpha_u}, {alpha_v}) outside the valid domain: {reason}")]
    Domain {
        alpha_u: f64,
        alpha_v: f64,
        reason: &'static str,
    },

    #[error("activation violates the search-phase assumption: {0}")]
    AssumptionViolation(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("internal invariant broken: {0}")]
    Internal(String),

    #[error("training diverged at step {step}")]
    Divergence { step: u64 },

    #[error("step-size check failed: halving dt moved the endpoint by {diff:e}")]
    StepSize { diff: f64 },

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("not enough samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("median recovery time censored at d = {d} ({censored} of {runs} runs never recovered); fit aborted")]
    Censored {
        d: usize,
        censored: usize,
        runs: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
