use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] glrtml::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use glrtml::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(E::InvalidConfig(_) | E::TooFewPoints { .. }) => 2,
            CliError::Core(E::NoPositivePairs | E::NoNegativePairs) => 4,
            CliError::Core(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
