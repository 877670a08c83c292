use std::path::Path;

use thiserror::Error;

/// Failure of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or input contents.
    #[error("{0}")]
    Config(String),
    /// Diverged training, singular steps, failed checks.
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    /// Tags a library error with the file it came from.
    pub fn at(path: &Path, e: latent_rom::Error) -> Self {
        match e {
            latent_rom::Error::Io(io) => CliError::io(path, io),
            other => CliError::from(other).context(&path.display().to_string()),
        }
    }

    fn context(self, what: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{what}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{what}: {m}")),
        }
    }
}

impl From<latent_rom::Error> for CliError {
    fn from(e: latent_rom::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else if let latent_rom::Error::Io(io) = e {
            CliError::Io(io.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
