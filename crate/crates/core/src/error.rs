use thiserror::Error;

/// Errors produced anywhere in the fusion stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A softmax slice had every entry masked out.
    #[error("degenerate slice: every entry of a softmax slice is masked")]
    DegenerateSlice,

    /// Invalid scenario, channel or model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Argument outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("weights container: {0}")]
    Weights(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors that stem from user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_) | Error::Weights(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
