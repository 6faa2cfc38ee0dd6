use thiserror::Error;

pub type Result<T> = std::result::Result<T, EaasError>;

#[derive(Debug, Error)]
pub enum EaasError {
    #[error(transparent)]
    Core(#[from] embmark_core::Error),
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service unavailable after {attempts} attempts: {last}")]
    ServiceUnavailable { attempts: u32, last: String },
    #[error("service rejected the request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("query spec is empty")]
    EmptySpec,
    #[error("response has {found} embeddings for {expected} items")]
    ResponseShape { expected: usize, found: usize },
    #[error("resume state belongs to a different query spec")]
    StaleResumeState,
    #[error("invalid service config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
