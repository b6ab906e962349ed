//! Cross-identity person synthesis.
//!
//! An appearance encoder maps a crop to a coarse code that carries clothing
//! color; a structure encoder maps its grayscale version to a spatial code
//! that carries pose and position. The decoder renders a structure code with
//! an appearance injected only through adaptive instance normalization, and a
//! patch discriminator scores realism.

pub mod checkpoint;
pub mod error;
pub mod losses;
pub mod model;
pub mod nets;
pub mod profile;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::SynthError;
pub use losses::{adversarial_objectives, code_l1, tape_disc_loss, tape_gen_adv, ADV_EPS};
pub use model::{AppearanceCode, CrossSynthesis, StructureCode, SynthGan, SyntheticImage};
pub use profile::GanProfile;

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

pub type SynthGanF32 = SynthGan<f32>;
pub type SynthGanF64 = SynthGan<f64>;

/// Parameter-set ids; every set on one tape needs its own.
pub const APP_SET: usize = 0;
pub const STR_SET: usize = 1;
pub const DEC_SET: usize = 2;
pub const DISC_SET: usize = 3;
