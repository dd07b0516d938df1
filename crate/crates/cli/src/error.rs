use std::io;

use thiserror::Error;

/// Command failures, each tied to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or missing inputs.
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Diverged(String),
    /// A checkpoint or dataset failed its integrity checks.
    #[error("{0}")]
    Corrupt(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Corrupt(_) => 4,
        }
    }

    /// Classifies a core error raised while reading an input file.
    pub fn reading(what: &str, path: &std::path::Path, e: cimle_core::Error) -> Self {
        let msg = format!("{what} {}: {e}", path.display());
        match e {
            cimle_core::Error::Corrupt(_) => CliError::Corrupt(msg),
            cimle_core::Error::Io(ref io) if io.kind() == io::ErrorKind::UnexpectedEof => CliError::Corrupt(msg),
            cimle_core::Error::Io(_) => CliError::Config(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<cimle_core::Error> for CliError {
    fn from(e: cimle_core::Error) -> Self {
        match e {
            cimle_core::Error::Io(_) => CliError::Runtime(e.to_string()),
            cimle_core::Error::Corrupt(_) => CliError::Corrupt(e.to_string()),
            cimle_core::Error::NonFinite(_) => CliError::Diverged(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}
