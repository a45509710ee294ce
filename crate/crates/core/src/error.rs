use thiserror::Error;

/// Errors surfaced by the tracking library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MttError {
    #[error("covariance is not symmetric positive semi-definite: {0}")]
    NonPsdCovariance(String),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("tracker requires at least one initial track")]
    NoInitialTracks,
    #[error("deadline exceeded")]
    Timeout,
    #[error("scenario rejected: {0}")]
    Scenario(String),
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("frame {frame}: {source}")]
    AtFrame { frame: usize, source: Box<MttError> },
    #[error("i/o: {0}")]
    Io(String),
}

impl MttError {
    /// Strips any frame context.
    pub fn root(&self) -> &MttError {
        match self {
            MttError::AtFrame { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for MttError {
    fn from(e: std::io::Error) -> Self {
        MttError::Io(e.to_string())
    }
}

impl From<csv::Error> for MttError {
    fn from(e: csv::Error) -> Self {
        MttError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MttError>;
