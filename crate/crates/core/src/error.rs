use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-positive mobility sample {value} at node {node}")]
    NonPositiveMobility { node: usize, value: f64 },
    #[error("anchor node missing: {0}")]
    AnchorMissing(String),
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("friction matrix is not diagonal (off-diagonal {0:e})")]
    NotDiagonal(f64),
    #[error("unsupported mobility field: {0}")]
    UnsupportedMobility(String),
    #[error("unsupported anisotropy: {0}")]
    UnsupportedAnisotropy(String),
    #[error("marginals have different masses ({0:e} vs {1:e})")]
    InfeasibleMarginals(f64, f64),
    #[error("problem size {size} exceeds limit {limit}")]
    SizeExceeded { size: usize, limit: usize },
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("embedding has no inverse for this family: {0}")]
    NotInvertible(String),
    #[error("continuity equation violated (residual {0:e})")]
    ContinuityViolated(f64),
    #[error("singular operator: {0}")]
    SingularOperator(String),
    #[error("velocity constraint violated (residual {0:e})")]
    ConstraintViolated(f64),
    #[error("dual potentials are required")]
    MissingDuals,
    #[error("transport map is required")]
    MissingMap,
    #[error("linear solver failure: {0}")]
    SolverFailure(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
