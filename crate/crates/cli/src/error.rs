use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("input not found: {}", .0.display())]
    MissingInput(PathBuf),

    #[error(transparent)]
    Core(#[from] corerec::Error),
}

impl CliError {
    /// 2 usage/config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::MissingInput(_) => 2,
            CliError::Core(e) => e.exit_code(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
