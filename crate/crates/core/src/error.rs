use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degree mismatch: {0}")]
    DegreeMismatch(String),

    #[error("invalid multi-index: {0}")]
    InvalidIndex(String),

    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("spectrum [{min:.6}, {max:.6}] outside ellipticity window [{lambda}, 1/{lambda}]")]
    EllipticityViolation { min: f64, max: f64, lambda: f64 },

    #[error("singular coefficient matrix")]
    Singular,

    #[error("unsupported polynomial degree {0} (at most 2)")]
    UnsupportedPolynomial(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grid side {0} is not a power of three")]
    NotTriadic(usize),

    #[error("empty region")]
    EmptyRegion,

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("conjugate gradient did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("inconsistent right-hand side (kernel component {0:.3e})")]
    InconsistentRhs(f64),

    #[error("not a discrete solution: interior residual {0:.3e}")]
    NotASolution(f64),

    #[error("ill-conditioned estimate (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Solver failures are distinguished from bad input by callers that map
    /// errors to exit codes.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::InconsistentRhs(_)
                | Error::NotASolution(_)
                | Error::IllConditioned(_)
                | Error::Singular
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_) | Error::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
