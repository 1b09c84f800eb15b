use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value {value} for `{name}` is outside [0, 1]")]
    Range { name: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward called on a value that does not depend on any trainable tensor")]
    Detached,

    #[error("plant failed on batch item {index}: {reason}")]
    Plant { index: usize, reason: String },

    #[error("external plant: {0}")]
    Adapter(String),

    #[error("malformed input in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("statistics: {0}")]
    Stats(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
