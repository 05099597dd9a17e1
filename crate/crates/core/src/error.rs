use thiserror::Error;

use crate::field::BackendTag;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("metric density is not positive: min {min:.3e} at node {node}")]
    NonKahler { min: f64, node: usize },

    #[error("quadrature drift in {quantity}: relative error {relative:.3e} exceeds {tolerance:.1e}")]
    QuadratureDrift {
        quantity: &'static str,
        relative: f64,
        tolerance: f64,
    },

    #[error("field lives on {found:?}, expected {expected:?}")]
    BackendMismatch {
        expected: BackendTag,
        found: BackendTag,
    },

    #[error("expected an invariant field with {expected} samples, got {found}")]
    NonInvariantInput { expected: usize, found: usize },

    #[error("weighted divergence is not defined for {0}")]
    RankUnsupported(&'static str),

    #[error("eigensolver failed on a {dim}x{dim} matrix (asymmetry {asymmetry:.3e}): {reason}")]
    EigensolveFailure {
        dim: usize,
        asymmetry: f64,
        reason: String,
    },

    #[error("Perelman entropy needs lambda > 0, backend has lambda = {0}")]
    WrongSign(f64),

    #[error("state is not critical: weighted norm of DH is {dh_norm:.3e} (threshold {threshold:.1e})")]
    NotCritical { dh_norm: f64, threshold: f64 },

    #[error("time step collapsed to {dt:.3e} at t = {t:.6}")]
    StepCollapse { dt: f64, t: f64 },

    #[error("flow lost Kähler positivity at t = {t:.6} and halving could not recover it")]
    PositivityLoss { t: f64 },

    #[error("invalid resolution {resolution} for {backend}: {reason}")]
    InvalidResolution {
        backend: &'static str,
        resolution: usize,
        reason: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// Errors that stem from the numerics rather than from the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            LabError::NonKahler { .. }
                | LabError::QuadratureDrift { .. }
                | LabError::EigensolveFailure { .. }
                | LabError::StepCollapse { .. }
                | LabError::PositivityLoss { .. }
        )
    }
}
