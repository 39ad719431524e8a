use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("depth {depth} m outside unambiguous range [0, {range}) m")]
    DepthOutOfRange { depth: f64, range: f64 },

    #[error("{count} clamped pixels are not invertible")]
    Clamped { count: usize },

    #[error("no jointly valid pixels")]
    EmptyValidSet,

    #[error("malformed {format}: {reason}")]
    Malformed { format: &'static str, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at iteration {0}")]
    Diverged(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn malformed(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Malformed {
            format,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
