use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cell index {index} out of range for a grid of {len} cells")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),

    #[error("grid of {cells} cells exceeds the dense covariance limit of {limit}")]
    GridTooLarge { cells: usize, limit: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("pressure solve failed: {0}")]
    PressureSolve(String),

    #[error("saturation transport needed more than {limit} CFL sub-steps in one interval")]
    CflOverflow { limit: usize },

    #[error("invalid observations: {0}")]
    InvalidObservations(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn format(message: impl Into<String>) -> Self {
        Error::Format(message.into())
    }
}
