use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("profile: {0}")]
    Profile(String),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    Shape { what: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] ps_nn::NnError),
    #[error(transparent)]
    Core(#[from] ps_core::CoreError),
}
