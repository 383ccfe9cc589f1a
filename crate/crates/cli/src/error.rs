use std::path::PathBuf;

use thiserror::Error;
use watchdog_core::Error as CoreError;

/// Process exit codes. Nothing else is ever returned.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const MISSING_STAGE: i32 = 3;
    pub const BAD_INPUT: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {message}")]
    ConfigKey { key: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("output directory {path} is not writable: {source}")]
    OutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("output directory {0} is locked by another command")]
    Locked(PathBuf),

    #[error("missing dependency: run `{stage}` first ({path} not found)")]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error("bad input: {0}")]
    BadInput(String),

    #[error("audit failed: {0}")]
    Audit(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigKey { .. }
            | CliError::Config(_)
            | CliError::ConfigRead { .. }
            | CliError::OutputDir { .. }
            | CliError::Locked(_) => exit::CONFIG,
            CliError::MissingStage { .. } => exit::MISSING_STAGE,
            CliError::BadInput(_) | CliError::Audit(_) => exit::BAD_INPUT,
            CliError::Core(e) => match e {
                // settings that cannot work: bad hyperparameters, unreachable targets
                CoreError::Config(_)
                | CoreError::InvalidSpec(_)
                | CoreError::Diverged { .. }
                | CoreError::GenerationFailed { .. }
                | CoreError::RetryBudget { .. } => exit::CONFIG,
                _ => exit::BAD_INPUT,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
