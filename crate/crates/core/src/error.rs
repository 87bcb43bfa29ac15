//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("resource limit exceeded: {required} nodes required, limit {limit}")]
    Resource { required: u128, limit: u128 },
    #[error("step too large: {0}")]
    StepTooLarge(String),
    #[error("solver failure: {msg} (residual {residual:e})")]
    SolverFailure { msg: String, residual: f64 },
    #[error("inconsistent right-hand side: defect {0:e}")]
    InconsistentRhs(f64),
    #[error("symmetry violation: defect {0:e}")]
    SymmetryViolation(f64),
    #[error("formula mismatch in {what}: gap {gap:e}")]
    FormulaMismatch { what: String, gap: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("bound unavailable: {0}")]
    BoundUnavailable(String),
    #[error("descent stalled: {0}")]
    Stalled(String),
    #[error("infeasible step: {0}")]
    InfeasibleStep(String),
    #[error("generation failure: {0}")]
    GenerationFailure(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
