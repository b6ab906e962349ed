//! Shared primitives for the person-search toolkit: the scalar abstraction,
//! box geometry, planar images and person crops, and embedding vectors.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the bottom of this file name the concrete instantiations used
//! by the rest of the workspace.

pub mod embedding;
pub mod error;
pub mod geometry;
pub mod image;
pub mod scalar;

pub use embedding::{l2_normalize, EmbeddingVector};
pub use error::CoreError;
pub use geometry::{iou, BoundingBox, Detection, IdentityLabel};
pub use image::{crop_and_resize, ImageBuf, PersonCrop};
pub use scalar::Scalar;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub type BoundingBoxF32 = BoundingBox<f32>;
pub type BoundingBoxF64 = BoundingBox<f64>;
pub type DetectionF32 = Detection<f32>;
pub type DetectionF64 = Detection<f64>;
pub type ImageF32 = ImageBuf<f32>;
pub type ImageF64 = ImageBuf<f64>;
pub type PersonCropF32 = PersonCrop<f32>;
pub type EmbeddingF32 = EmbeddingVector<f32>;
pub type EmbeddingF64 = EmbeddingVector<f64>;
