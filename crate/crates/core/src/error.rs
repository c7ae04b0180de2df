use thiserror::Error;

/// Errors raised anywhere in the tracking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible manifold geometry: {0}")]
    InfeasibleGeometry(String),
    #[error("degenerate prototype sum (norm {0:.3e})")]
    DegenerateSum(f64),
    #[error("zero-length feature vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("singular innovation covariance (condition number {0:.3e})")]
    SingularInnovation(f64),
    #[error("every step lies inside the dead zone")]
    NoEligibleSteps,
    #[error("no episode logs to aggregate")]
    EmptyLogs,
    #[error("scenario sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),
    #[error("no path from {start:?} to {goal:?}")]
    NoPath {
        start: (usize, usize),
        goal: (usize, usize),
    },
    #[error("non-finite loss in batch {0}")]
    NonFiniteLoss(usize),
    #[error("sampler produced a non-finite trajectory")]
    NonFiniteOutput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable numeric class, shared by the CLI exit status and the C API.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::DimensionMismatch { .. } => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Checkpoint(_) => 3,
            Error::InfeasibleGeometry(_) | Error::AssumptionViolated(_) => 4,
            Error::DegenerateSum(_) | Error::ZeroVector => 5,
            Error::SingularInnovation(_) => 6,
            Error::SamplingExhausted(_) | Error::NoPath { .. } => 7,
            Error::NonFiniteLoss(_) | Error::NonFiniteOutput => 8,
            Error::NoEligibleSteps | Error::EmptyLogs => 9,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
