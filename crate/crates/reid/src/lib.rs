//! Re-identification learning on real and synthetic crops.
//!
//! The student reuses the generator's appearance encoder as its backbone and
//! adds two linear heads. A joint step trains generator, discriminator and
//! student together; a frozen teacher supplies soft labels for synthetic
//! crops.

pub mod config;
pub mod error;
pub mod losses;
pub mod student;
pub mod teacher;
pub mod trainer;

pub use config::{LossWeights, OptimConfig, RealLoss, TrainConfig};
pub use error::ReidError;
pub use losses::{
    cross_entropy, kl_distill, kl_distill_logits_grad, oim_batch, oim_loss, oim_loss_grad, softmax, softmax_cross_entropy_grad, structure_id_loss,
    synth_id_loss, PROB_FLOOR,
};
pub use student::{embed, flatten_codes, ReidModel, Student};
pub use teacher::{TeacherConfig, TeacherModel};
pub use trainer::{load_model, LossReport, TrainData, TrainLog, Trainer};

pub type Result<T, E = ReidError> = std::result::Result<T, E>;

pub type ReidModelF32 = ReidModel<f32>;
pub type ReidModelF64 = ReidModel<f64>;
pub type TrainerF32 = Trainer<f32>;
pub type TrainerF64 = Trainer<f64>;

/// Parameter-set id of the student heads.
pub const HEAD_SET: usize = 4;
/// Parameter-set id of the teacher.
pub const TEACHER_SET: usize = 5;
