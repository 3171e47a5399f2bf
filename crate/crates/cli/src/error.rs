use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot parse manifest {path}: {reason}")]
    ManifestParse { path: PathBuf, reason: String },

    #[error("sample {sample}: missing input `{what}`")]
    MissingInput { sample: String, what: &'static str },

    #[error("cannot write {path}: {reason}")]
    WriteFailure { path: PathBuf, reason: String },

    #[error("cannot read {path}: {reason}")]
    ReadFailure { path: PathBuf, reason: String },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] metricforge::Error),
}

impl CliError {
    pub(crate) fn read(path: impl Into<PathBuf>, err: impl ToString) -> Self {
        Self::ReadFailure {
            path: path.into(),
            reason: err.to_string(),
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, err: impl ToString) -> Self {
        Self::WriteFailure {
            path: path.into(),
            reason: err.to_string(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Self::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
