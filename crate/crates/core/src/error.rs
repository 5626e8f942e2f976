use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error in {path} at byte offset {offset}: {reason}")]
    Parse {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("training diverged at step {step}{}", .seed.map(|s| format!(" (seed {s})")).unwrap_or_default())]
    TrainingDiverged { step: usize, seed: Option<u64> },

    #[error("integration produced a non-finite value at step {step}")]
    Integration { step: usize },

    #[error("stage `{stage}` is missing its upstream artifact {path}")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Shape(_) | Error::Parse { .. } | Error::MissingArtifact { .. } | Error::Io { .. } => 3,
            Error::TrainingDiverged { .. } | Error::Integration { .. } => 4,
        }
    }
}
