use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot parse {path}")]
    ConfigSyntax {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid file {path}")]
    File {
        path: PathBuf,
        #[source]
        source: dfpd_core::Error,
    },

    #[error("{0}")]
    Mismatch(String),

    #[error("no trajectory records in {0}")]
    EmptyInput(PathBuf),

    #[error(transparent)]
    Core(#[from] dfpd_core::Error),

    #[error(transparent)]
    Pendulum(#[from] dfpd_pendulum::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn file_err(path: impl Into<PathBuf>) -> impl FnOnce(dfpd_core::Error) -> Error {
    let path = path.into();
    move |source| Error::File { path, source }
}
