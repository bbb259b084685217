use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the set where the model is defined
    /// (e.g. a power-law exponent at or below 1).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameters are not stationary: spectral radius {radius} >= 1")]
    NonStationary { radius: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("simulation exceeded max_events ({limit}); {count} events generated before stopping")]
    MaxEventsExceeded { limit: usize, count: usize },

    #[error("point is outside the feasible box: {0}")]
    Infeasible(String),

    #[error("internal invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
