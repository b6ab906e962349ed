//! Annotated scene frames, the JSON dataset manifest, and a procedural toy
//! world whose people have separately controllable appearance (a clothing
//! palette) and structure (pose, scale, position).

pub mod error;
pub mod manifest;
pub mod pairs;
pub mod pngio;
pub mod protocol;
pub mod toy;
pub mod types;

pub use error::DataError;
pub use manifest::{load_annotations, save_annotations};
pub use pairs::{sample_training_pairs, PairSampler};
pub use protocol::sample_protocol;
pub use toy::{generate_toy_dataset, Palette, ToyDataset, ToyOracle, ToySpec};
pub use types::{AnnotatedFrame, Dataset, Query, SceneImage, SearchProtocol};

pub type Result<T, E = DataError> = std::result::Result<T, E>;
