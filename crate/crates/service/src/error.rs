use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("image `{0}` belongs to a held-out split")]
    Leakage(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("corrupt event log: {0}")]
    Corrupt(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] alqa_core::Error),

    #[error("http: {0}")]
    Http(String),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Leakage(_) => "leakage",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Corrupt(_) => "corrupt",
            ServiceError::Io { .. } => "io",
            ServiceError::Json(_) => "json",
            ServiceError::Core(_) => "core",
            ServiceError::Http(_) => "http",
        }
    }
}

pub type ServiceResult<T> = Result<T, ServiceError>;

pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ServiceError {
    let path = path.into();
    move |source| ServiceError::Io { path, source }
}
