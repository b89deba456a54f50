//! Differentiable kernels recorded on a [`Tape`](super::Tape).

mod conv;
mod elementwise;
mod layout;
mod linear;
mod norm;
mod softmax;

pub use conv::same_padding;
pub use norm::{BatchNormStats, BN_EPS, BN_MOMENTUM, LN_EPS};

/// Forward-pass behaviour of batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}
