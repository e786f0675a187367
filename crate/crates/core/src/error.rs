use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("numeric error in {location}: {detail}")]
    Numeric { location: String, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("format error in {tensor}: {detail}")]
    Format { tensor: String, detail: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("not a head axis: {0}")]
    NotHeadAxis(String),
    #[error("not a matrix: {0}")]
    NotMatrix(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("step '{step}' failed: {source}")]
    Step {
        step: String,
        #[source]
        source: Box<Error>,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(tensor: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { tensor: tensor.into(), detail: detail.into() }
    }

    pub(crate) fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric { location: location.into(), detail: detail.into() }
    }
}
