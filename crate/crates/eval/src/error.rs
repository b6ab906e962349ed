use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {0} has no ground-truth match in its gallery")]
    Unevaluable(String),
    #[error("no evaluable queries")]
    NoQueries,
    #[error("config: {0}")]
    Config(String),
    #[error("frame {0:?} is not in the dataset")]
    MissingFrame(String),
    #[error(transparent)]
    Core(#[from] ps_core::CoreError),
    #[error(transparent)]
    Data(#[from] ps_data::DataError),
    #[error(transparent)]
    Detect(#[from] ps_detect::DetectError),
    #[error(transparent)]
    Reid(#[from] ps_reid::ReidError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
