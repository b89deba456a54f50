//! Spatial-temporal EEG patch transformer for binary attention-state
//! decoding, with the tensor engine, data pipeline and leave-one-subject-out
//! experiment harness it needs.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training,
//! `f64` for gradient checking); the aliases below fix the common choices.

pub mod codec;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use model::{ModelConfig, PatchFormerModel};
pub use numerics::{Rng, Scalar, Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = PatchFormerModel<f32>;
pub type Model64 = PatchFormerModel<f64>;
