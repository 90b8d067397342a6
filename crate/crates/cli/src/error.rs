use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Core {
        path: PathBuf,
        #[source]
        source: ncm::Error,
    },

    #[error(transparent)]
    Ncm(#[from] ncm::Error),

    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    /// 1 for configuration problems, 2 for I/O and file-format problems, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Core { source, .. } | CliError::Ncm(source) => core_code(source),
        }
    }
}

fn core_code(e: &ncm::Error) -> u8 {
    match e {
        _ if e.is_numerical() => 3,
        ncm::Error::Io(_) | ncm::Error::Format(_) => 2,
        _ => 1,
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a path to I/O and file-format errors from the core library.
pub trait WithPath<T> {
    fn at(self, path: impl Into<PathBuf>) -> CliResult<T>;
}

impl<T> WithPath<T> for Result<T, ncm::Error> {
    fn at(self, path: impl Into<PathBuf>) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            path: path.into(),
            source,
        })
    }
}

impl<T> WithPath<T> for Result<T, std::io::Error> {
    fn at(self, path: impl Into<PathBuf>) -> CliResult<T> {
        self.map_err(|source| CliError::Io {
            path: path.into(),
            source,
        })
    }
}
