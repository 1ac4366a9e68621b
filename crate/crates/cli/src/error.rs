use std::path::Path;

use thiserror::Error;

/// Failure of a CLI command, split by who has to act on it.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration, or input files.
    #[error("{0}")]
    Input(String),
    /// The command started but could not finish.
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] mmht_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(msg.into())
    }

    /// `path: detail` as an input error.
    pub fn at(path: &Path, detail: impl std::fmt::Display) -> Self {
        Self::Input(format!("{}: {detail}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        use mmht_core::Error as E;
        match self {
            Self::Input(_) => 1,
            Self::Runtime(_) => 2,
            Self::Core(E::Contract(_)) => 2,
            Self::Core(E::Dimension { .. } | E::Config(_) | E::Checkpoint(_) | E::Io(_)) => 1,
        }
    }
}
