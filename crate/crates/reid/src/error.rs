use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReidError {
    #[error("class index {index} outside 0..{classes}")]
    ClassIndex { index: usize, classes: usize },
    #[error("{0} needs a labeled identity")]
    Unlabeled(&'static str),
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("pair ({0}, {1}) shares one identity")]
    UnpairedIdentities(u32, u32),
    #[error("non-finite {component} at step {step}")]
    NonFinite { step: u64, component: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Synth {
        context: &'static str,
        #[source]
        source: ps_synthgan::SynthError,
    },
    #[error("{context}: {source}")]
    Detect {
        context: &'static str,
        #[source]
        source: ps_detect::DetectError,
    },
    #[error(transparent)]
    Data(#[from] ps_data::DataError),
    #[error(transparent)]
    Core(#[from] ps_core::CoreError),
    #[error(transparent)]
    Nn(#[from] ps_nn::NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Attaches a short description of the failing stage to upstream errors.
pub(crate) trait Context<T> {
    fn context(self, what: &'static str) -> Result<T, ReidError>;
}

impl<T> Context<T> for Result<T, ps_synthgan::SynthError> {
    fn context(self, what: &'static str) -> Result<T, ReidError> {
        self.map_err(|source| ReidError::Synth { context: what, source })
    }
}

impl<T> Context<T> for Result<T, ps_detect::DetectError> {
    fn context(self, what: &'static str) -> Result<T, ReidError> {
        self.map_err(|source| ReidError::Detect { context: what, source })
    }
}
