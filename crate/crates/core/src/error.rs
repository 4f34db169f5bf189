use thiserror::Error;

/// Errors raised by model validation, reformulation and solving.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Validation(String),

    #[error("transition row for (state {state}, action {action}) is invalid: {reason}")]
    TransitionRow {
        state: usize,
        action: usize,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("{generator} generator is not supported for {operation}")]
    UnsupportedGenerator {
        generator: String,
        operation: &'static str,
    },

    #[error("log-elliptical mean diverges: {0}")]
    DivergentMean(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("constraint {index} is not second-order-cone representable: tightened confidence {confidence} < 0.5")]
    Nonconvex { index: usize, confidence: f64 },

    #[error("target {target} outside the attainable interval [{low}, {high}]")]
    Range { target: f64, low: f64, high: f64 },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
