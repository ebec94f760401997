//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the analysis routines.
///
/// Numeric routines in this crate prefer returning an error over silently
/// clamping or extrapolating; callers that want a lenient behaviour opt in
/// explicitly (see e.g. the `clamped` flag on weighted-occupation CDFs).
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A matrix fails a structural requirement (stochasticity, generator
    /// sign pattern, strictly decreasing weights, ...).
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    /// The chain does not visit every state from every state, so the
    /// stationary distribution is not unique.
    #[error("reducible chain: {0}")]
    Reducible(String),

    /// A fixed-point or search iteration hit its cap before reaching the
    /// requested tolerance.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// The queue has non-negative drift and no stationary distribution.
    #[error("unstable queue: mean drift per slot {drift:.6e} >= 0")]
    Unstable { drift: f64 },

    /// A level truncation left more probability mass unaccounted for than
    /// the caller allows.
    #[error("truncation residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    ResidualTooLarge { residual: f64, tol: f64 },

    /// No margin in the searched range meets the requested target.
    #[error("no feasible margin: {0}")]
    InfeasibleMargin(String),

    /// A coupled simulation observed an ordering violation that the
    /// construction forbids.
    #[error("dominance violation: {0}")]
    DominanceViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for an `InvalidParameter` with a formatted message.
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
