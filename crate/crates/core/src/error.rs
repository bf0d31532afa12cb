use thiserror::Error;

/// Error type shared across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input record; carries the location (line / record index).
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Invalid configuration (unknown format tag, bad grouping, bad grid).
    #[error("configuration error: {0}")]
    Config(String),

    /// Data violates a structural invariant (roster sizes, on-field sets).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Numerical failure (non-finite values, non-convergence reported as error).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Stable machine-parsable code, one per error family.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "E_PARSE",
            Error::Config(_) => "E_CONFIG",
            Error::Integrity(_) => "E_INTEGRITY",
            Error::Numeric(_) => "E_NUMERIC",
            Error::Io(_) => "E_IO",
            Error::Csv(_) => "E_CSV",
            Error::Json(_) => "E_JSON",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
