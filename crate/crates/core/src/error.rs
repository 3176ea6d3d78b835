use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability {0} is outside the open interval (0, 1)")]
    InvalidProbability(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),

    /// Quotient of two Gaussians with identical precision.
    #[error("degenerate cavity: precisions cancel exactly")]
    DegenerateCavity,

    /// `a^2 == b` in the factor-2 moment update.
    #[error("degenerate factor update")]
    DegenerateUpdate,

    #[error("matrix is numerically singular (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("exact enumeration supports at most {max} features, got {got}")]
    TooManyFeatures { max: usize, got: usize },

    #[error("undefined quantity: {0}")]
    Undefined(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by malformed input text.
    pub fn is_parse(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Csv(_) | Error::Json(_))
    }
}
