use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("timestep {t} outside [{lo}, {hi}]")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("non-finite values produced by {0}")]
    NonFinite(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },

    #[error("{path}: {cause}")]
    Image {
        path: PathBuf,
        cause: image::ImageError,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    /// True for failures caused by bad user input (paths, configs, shapes)
    /// rather than numerical breakdown or internal faults.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::ShapeMismatch { .. }
                | Error::InvalidInput(_)
                | Error::InvalidConfig(_)
                | Error::Checkpoint(_)
                | Error::Io { .. }
                | Error::Image { .. }
                | Error::Json(_)
                | Error::Csv(_)
                | Error::TimestepOutOfRange { .. }
                | Error::InvalidSchedule(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
