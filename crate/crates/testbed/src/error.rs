use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] gauntlet_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("i/o error on {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("tls: {0}")]
    Tls(#[from] rustls::Error),
    #[error("certificate generation: {0}")]
    Cert(#[from] rcgen::Error),
    #[error("http: {0}")]
    Http(String),
    #[error("config: {0}")]
    Config(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("subject {subject}: {detail}")]
    Subject { subject: String, detail: String },
    #[error("cache rebuild failed on {page}: {detail}")]
    Rebuild { page: String, detail: String },
    #[error("missing suite asset {0}")]
    MissingAsset(String),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub fn http(detail: impl Into<String>) -> Self {
        Error::Http(detail.into())
    }
}
