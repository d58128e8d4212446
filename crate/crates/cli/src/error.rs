use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] eds_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{} already holds a completed run; pass --force to overwrite", .0.display())]
    RunExists(PathBuf),

    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Usage(_) => "usage",
            CliError::RunExists(_) => "run-exists",
            CliError::Mismatch(_) => "mismatch",
        }
    }

    /// `error[category]: message` on a single line.
    pub fn report_line(&self) -> String {
        let message = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}]: {message}", self.category())
    }
}

pub type CliResult<T> = Result<T, CliError>;
