use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    /// Core failure while handling a particular file.
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: embaudit_core::Error },

    #[error(transparent)]
    Core(#[from] embaudit_core::Error),
}

impl CliError {
    /// 1 for bad input or arguments, 2 when the environment failed.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io { .. } => 2,
            CliError::File { source, .. } | CliError::Core(source) if source.is_io() => 2,
            CliError::File { .. } | CliError::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait Context<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T> Context<T> for Result<T, io::Error> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|source| CliError::Io { path: path.to_path_buf(), source })
    }
}

impl<T> Context<T> for embaudit_core::Result<T> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|source| CliError::File { path: path.to_path_buf(), source })
    }
}
