use thiserror::Error;

use crate::dataset::NecessaryConditions;

/// Failures raised by the linear-algebra layer, the direction oracles and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TmeError {
    /// A matrix expected to be positive definite failed its Cholesky factorization
    /// (or had a non-positive eigenvalue).
    #[error("matrix is no longer positive definite")]
    PositiveDefinitenessLost,

    /// Some quadratic form `x_i^T Q^{-1} x_i` came out non-positive or non-finite.
    #[error("numerical breakdown at data point {index}: x^T Q^-1 x = {value}")]
    NumericalBreakdown { index: usize, value: f64 },

    /// A Sherman-Morrison or step-size denominator was not strictly positive.
    #[error("non-positive denominator {0} in rank-one update")]
    DenominatorNonPositive(f64),

    /// The step size must satisfy `mu < 1`.
    #[error("invalid step size mu = {0} (must be < 1)")]
    InvalidStep(f64),

    /// A column of the input was the zero vector.
    #[error("data point {0} is the zero vector")]
    ZeroVectorInput(usize),

    /// The power method's start vector was annihilated by the operator.
    #[error("operator vanished on the start vector")]
    ZeroOperator,

    /// The oracle found a vanishing gradient: the current iterate is optimal.
    #[error("gradient vanished; iterate is optimal")]
    Converged,

    /// The FW oracle could not certify a descent direction within its budget.
    #[error("FW oracle failed to certify descent (v^T grad v = {rayleigh})")]
    NotDescent { rayleigh: f64, matvecs: usize },

    /// The dataset fails a necessary condition for existence of the estimator.
    #[error("necessary conditions failed: {0}")]
    AssumptionCheckFailed(NecessaryConditions),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = TmeError> = std::result::Result<T, E>;
