use thiserror::Error;

/// Errors raised by the integrators, the adjoint sweep and the estimation
/// pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tableau has a zero weight at partition {partition}, stage {stage}; the scaled adjoint form is undefined")]
    UnsupportedTableau { partition: usize, stage: usize },

    #[error("tableau failed validation: {0}")]
    InvalidTableau(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid transfer: {0}")]
    Transfer(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular matrix: zero pivot in column {0}")]
    SingularMatrix(usize),

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("Newton iteration failed at partition {partition}, stage {stage} after {iterations} iterations (last update norm {residual:e})")]
    StepFailure {
        partition: usize,
        stage: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("time grids do not match: {0}")]
    TimeGridMismatch(String),

    #[error("oracle limit exceeded: dimension {dim} > cap {cap}")]
    OracleTooLarge { dim: usize, cap: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
