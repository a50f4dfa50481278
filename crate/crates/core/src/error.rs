use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A linear predictor or derived parameter is not finite.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A function was evaluated outside its domain (e.g. hazard at t <= 0).
    #[error("domain error: {0}")]
    Domain(String),

    /// Model specification or coefficient layout is inconsistent.
    #[error("invalid model specification: {0}")]
    Spec(String),

    /// The data carry no information about the model (e.g. every row right-censored).
    #[error("non-identifiable: {0}")]
    NonIdentifiable(String),

    #[error("covariance matrix is not available: {0}")]
    InvalidCovariance(String),

    /// Malformed input file; `row` is 1-based and counts data rows after the header.
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
