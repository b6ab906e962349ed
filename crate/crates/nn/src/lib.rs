//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns gradients for the parameters that entered
//! the tape through [`Tape::param`]. Parameters live in [`ParamSet`]s, each
//! owned by one network and updated by one optimizer.

pub mod archive;
pub mod error;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use archive::{Archive, Section};
pub use error::NnError;
pub use layers::{Conv2d, Linear};
pub use optim::{Adam, Optimizer, Sgd};
pub use params::{Gradients, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = NnError> = std::result::Result<T, E>;
