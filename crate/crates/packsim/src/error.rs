use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    Trace {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Core {
        context: String,
        source: packsim_core::Error,
    },
}

impl HarnessError {
    pub fn core(context: impl Into<String>) -> impl FnOnce(packsim_core::Error) -> Self {
        let context = context.into();
        move |source| Self::Core { context, source }
    }

    /// Process exit code: 2 config, 3 ingestion, 4 oracle limit, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } | Self::InvalidConfig(_) => 2,
            Self::Trace { .. } | Self::Read { .. } => 3,
            Self::Core {
                source: packsim_core::Error::OracleLimit { .. },
                ..
            } => 4,
            Self::Core {
                source:
                    packsim_core::Error::InvalidParallelism(_)
                    | packsim_core::Error::InvalidProfile(_)
                    | packsim_core::Error::InvalidThresholds(_),
                ..
            } => 2,
            Self::Write { .. } | Self::Core { .. } => 1,
        }
    }
}
