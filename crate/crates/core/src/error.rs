use thiserror::Error;

/// Error type shared by the whole engine.
#[derive(Debug, Error)]
pub enum NilgeoError {
    /// Malformed or mathematically inconsistent algebra description.
    #[error("invalid algebra spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Operation only defined for some nilpotency steps.
    #[error("step {step} not supported by {op}")]
    UnsupportedStep { step: u8, op: &'static str },

    /// Requested graph isometry does not exist.
    #[error("no isometry: {0}")]
    NoIsometry(String),

    /// A linear solve that should be regular came out rank deficient.
    #[error("solver degenerate: {0}")]
    SolverDegenerate(String),

    /// Optimizer could not meet the endpoint tolerance within budget.
    #[error("infeasible: best endpoint residual {residual:.3e}")]
    Infeasible { residual: f64 },

    /// Internal consistency check failed; indicates a bug or bad input.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NilgeoError>;
