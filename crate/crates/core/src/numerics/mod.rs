//! Tensor storage, reverse-mode differentiation and the differentiable
//! kernels the model is built from.

mod attention;
pub mod gradcheck;
pub mod ops;
mod param;
mod rng;
mod scalar;
mod tape;
pub(crate) mod tensor;

pub use attention::{AttentionOutput, AttentionParams};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_EPS};
pub use ops::{BatchNormStats, Mode};
pub use param::{InitSpec, ParamId, ParamStore, Parameter};
pub use rng::{derive_seed, Rng};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
