use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {hint}: {source}")]
    MissingData { path: PathBuf, hint: &'static str, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("checkpoint schema version {found} is not supported (this build reads version {expected})")]
    SchemaVersion { found: u64, expected: u64 },
    #[error("checkpoint does not match the configuration: {field} differs (checkpoint {found}, config {expected})")]
    Mismatch { field: &'static str, found: String, expected: String },
    #[error(transparent)]
    Core(#[from] dreal_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
