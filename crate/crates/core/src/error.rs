use std::io;

use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum DmcError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid dimension: {0}")]
    InvalidDim(String),
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("non-positive input at index {index}: {value}")]
    NonPositiveInput { index: usize, value: f64 },
    #[error("no descent direction found after {inflations} damping inflations")]
    NoDescentDirection { inflations: usize },
    #[error("model order {order} does not match {separations} separations")]
    OrderMismatch { order: usize, separations: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training loss diverged at step {step}")]
    DivergedLoss { step: usize },
    #[error("Fisher information matrix is singular")]
    SingularFim,
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DmcError>;

impl DmcError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        DmcError::InvalidParam(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DmcError::ShapeMismatch(msg.into())
    }

    /// True for failures of the numerical kind (exit code 4 in the CLI).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            DmcError::NotPositiveDefinite { .. }
                | DmcError::NonPositiveInput { .. }
                | DmcError::NoDescentDirection { .. }
                | DmcError::DivergedLoss { .. }
                | DmcError::SingularFim
        )
    }
}
