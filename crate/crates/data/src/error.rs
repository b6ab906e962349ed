use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("frame {frame}: cannot read image {path}: {source}")]
    MissingImage {
        frame: String,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("frame {frame}: image decode failed: {detail}")]
    Decode { frame: String, detail: String },
    #[error("frame {frame}, box {index}: {detail}")]
    InvalidBox { frame: String, index: usize, detail: String },
    #[error("frame {frame}: identity {identity} annotated more than once")]
    DuplicateIdentity { frame: String, identity: u32 },
    #[error("query {index}: {detail}")]
    InvalidQuery { index: usize, detail: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("toy spec: {0}")]
    InvalidSpec(String),
    #[error("cannot place {persons} people of width {person_width}px in a {width}px frame")]
    Placement { persons: usize, person_width: usize, width: usize },
    #[error("pair sampling needs at least two labeled identities, found {0}")]
    InsufficientDiversity(usize),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Core(#[from] ps_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
