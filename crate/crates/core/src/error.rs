use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty service area")]
    EmptyServiceArea,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient history for zone {zone}: need {needed} observations, have {have}")]
    InsufficientHistory { zone: usize, needed: usize, have: usize },

    #[error("singular design matrix; use a regularization strength > 0")]
    SingularDesign,

    #[error("all entries are infinite")]
    AllInfinite,

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("solver budget exhausted")]
    BudgetExhausted,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data { path: path.into(), message: message.into() }
    }

    /// True for errors caused by malformed or missing input data (as opposed
    /// to invalid parameters).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::InsufficientHistory { .. }
                | Error::EmptyServiceArea
        )
    }
}
