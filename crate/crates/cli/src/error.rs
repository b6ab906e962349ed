use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("output directory {0} is not empty (pass --force to reuse it)")]
    OutputNotEmpty(PathBuf),
    #[error("checkpoint {0} does not exist")]
    MissingCheckpoint(PathBuf),
    #[error("non-finite {component} at step {step}; last good checkpoint: {last_good}")]
    NonFinite { step: u64, component: String, last_good: String },
    #[error("{unevaluable} of {total} queries could not be evaluated")]
    MostlyUnevaluable { unevaluable: usize, total: usize },
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Data(#[from] ps_data::DataError),
    #[error(transparent)]
    Detect(#[from] ps_detect::DetectError),
    #[error(transparent)]
    Synth(#[from] ps_synthgan::SynthError),
    #[error(transparent)]
    Reid(#[from] ps_reid::ReidError),
    #[error(transparent)]
    Eval(#[from] ps_eval::EvalError),
    #[error(transparent)]
    Core(#[from] ps_core::CoreError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Toml(_) | CliError::OutputNotEmpty(_) => 2,
            CliError::NonFinite { .. } => 3,
            CliError::MostlyUnevaluable { .. } => 4,
            _ => 1,
        }
    }
}
