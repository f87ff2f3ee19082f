use std::path::PathBuf;

use sdecov_core::SdeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Argument errors, help and version; clap has already printed them.
    #[error("invalid arguments")]
    Parse { exit: i32 },
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: invalid JSON: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error("{}: row {row}: {message}", path.display())]
    Ingest { path: PathBuf, row: u64, message: String },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("output path {} is outside the output directory", .0.display())]
    OutsideOutDir(PathBuf),
    #[error(transparent)]
    Model(#[from] SdeError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// 2 for numerical failures inside a pipeline, 1 for everything the
    /// user can fix.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { exit } => *exit,
            CliError::Model(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
