use thiserror::Error;

/// Errors raised by the solver core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid boundary data: {0}")]
    InvalidBoundary(String),
    #[error("missing Dirichlet value at the {0} endpoint")]
    MissingBoundaryValue(&'static str),
    #[error("boundary value supplied at the Neumann {0} endpoint")]
    UnexpectedBoundaryValue(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular pivot at row {row}")]
    SingularMatrix { row: usize },
    #[error("non-positive concentration u_{species} = {value:e} in cell {cell}")]
    NonPositiveConcentration {
        species: usize,
        cell: usize,
        value: f64,
    },
    #[error("helmholtz solve requires a positive correlation length")]
    ZeroCorrelationLength,
    #[error("nonlinear solve did not converge (residual {residual:e} after {iterations} iterations)")]
    NotConverged { residual: f64, iterations: usize },
    #[error("time step failed at t = {time} after {halvings} halvings (last tau = {tau:e})")]
    StepFailure { time: f64, tau: f64, halvings: usize },
    #[error("reference state touches the simplex boundary: min concentration {min:e}")]
    ReferenceNotInterior { min: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
