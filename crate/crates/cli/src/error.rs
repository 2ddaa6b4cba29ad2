use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] ergolab::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{} already holds a '{subcommand}' run; pass --force to overwrite", dir.display())]
    AlreadyExists { dir: PathBuf, subcommand: String },

    #[error("invariant checks failed: {}", .0.join(", "))]
    ChecksFailed(Vec<String>),
}

impl CliError {
    /// 2 for budget and memory-cap errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(ergolab::Error::BudgetExceeded { .. } | ergolab::Error::MemoryCapExceeded { .. }) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
