use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("check failed: {0}")]
    Check(String),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] manifold_sgd::Error),
}

impl CliError {
    /// Process exit code: 1 check failure, 2 usage or configuration, 3
    /// numerical failure.
    pub fn exit_code(&self) -> u8 {
        use manifold_sgd::Error as E;
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) | CliError::Output { .. } => 2,
            CliError::Core(E::InvalidConfig(_) | E::Parse(_) | E::DegenerateData { .. } | E::UnsupportedNoise(_)) => 2,
            CliError::Core(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "check",
            2 => "config",
            _ => "numerical",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
