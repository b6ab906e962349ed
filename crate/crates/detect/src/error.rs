use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("identity {label} outside 1..={m}")]
    InvalidLabel { label: u32, m: usize },
    #[error("embedding has dimension {got}, memory expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("hard-negative selection needs at least one negative center")]
    NoNegatives,
    #[error("config: {0}")]
    Config(String),
    #[error("unknown detector profile {0:?} (expected cuhk or prw)")]
    UnknownProfile(String),
    #[error("detections file: {0}")]
    File(String),
    #[error(transparent)]
    Core(#[from] ps_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
