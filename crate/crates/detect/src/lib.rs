//! Turning raw detector output into identity-labeled training crops, and the
//! memory-based identity loss that trains the re-ID embedding on them.
//!
//! The pipeline is `filter_by_confidence` → `nms` → `match_to_ground_truth` →
//! `crop_positive_samples`. Embeddings of the surviving crops feed
//! [`IdentityMemory`] and [`aidq_loss`], which contrasts each sample against
//! its own identity center and an adaptively sized set of hard negatives.

pub mod aidq;
pub mod config;
pub mod error;
pub mod memory;
pub mod post;
pub mod source;

pub use aidq::{aidq_loss, hard_negative_count, hard_negative_count_from_scores, AidqOutput};
pub use config::DetectorConfig;
pub use error::DetectError;
pub use memory::{update_memory, IdentityMemory};
pub use post::{crop_positive_samples, filter_by_confidence, match_to_ground_truth, nms};
pub use source::{DetectionSource, FileDetections, GroundTruthDetector, ToyDetector};

pub type Result<T, E = DetectError> = std::result::Result<T, E>;

pub type IdentityMemoryF32 = IdentityMemory<f32>;
pub type IdentityMemoryF64 = IdentityMemory<f64>;
