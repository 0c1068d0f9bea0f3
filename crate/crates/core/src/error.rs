use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("return coverage violated: no probability mass at g={g} for (t={t}, s={state}); the conditioning value is outside the behavior return support")]
    ReturnCoverage { t: usize, state: usize, g: f64 },

    #[error("no source return distribution mass at g={g} for (t={t}, s={state}, a={action})")]
    SourceSupport {
        t: usize,
        state: usize,
        action: usize,
        g: f64,
    },

    #[error("training diverged (non-finite loss) at epoch {epoch}; last finite loss {last_loss}")]
    Diverged { epoch: usize, last_loss: f64 },

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Config-vs-runtime split used for process exit codes.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::InvalidArgument(_))
    }
}
