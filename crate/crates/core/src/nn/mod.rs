//! Differentiable compute substrate: tensors, reverse-mode tape, the
//! convolution operator set, Adam, and the checkpoint container.

pub mod checkpoint;
pub mod layers;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use layers::{init_resnet_block, resnet_block};
pub use params::{AdamConfig, Bound, GradMap, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor4};

#[cfg(test)]
pub(crate) mod testutil;

#[cfg(test)]
mod tests;
