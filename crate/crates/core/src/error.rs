use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The CLI maps the variants to exit codes: configuration problems to 2,
/// data problems to 3 and numerical failures to 4.
#[derive(Debug, Error)]
pub enum QarimaError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl QarimaError {
    pub fn exit_code(&self) -> i32 {
        match self {
            QarimaError::Config(_) => 2,
            QarimaError::InvalidInput(_) | QarimaError::Data(_) | QarimaError::Io(_) => 3,
            QarimaError::Numerical(_) => 4,
        }
    }
}

impl From<csv::Error> for QarimaError {
    fn from(e: csv::Error) -> Self {
        QarimaError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for QarimaError {
    fn from(e: serde_json::Error) -> Self {
        QarimaError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QarimaError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(QarimaError::InvalidInput(msg.into()))
}

impl From<toml::de::Error> for QarimaError {
    fn from(e: toml::de::Error) -> Self {
        QarimaError::Config(e.to_string())
    }
}
