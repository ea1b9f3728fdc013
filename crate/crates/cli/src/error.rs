use std::path::PathBuf;

use tailgame::ErrorCategory;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tailgame::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A verification command ran and found a failure.
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    /// 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.category() {
                ErrorCategory::Usage => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            },
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Check(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}
