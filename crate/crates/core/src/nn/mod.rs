//! A small CPU convolutional engine with explicit, layer-wise backpropagation.
//!
//! Everything operates on one sample at a time in channel-major (C×H×W)
//! layout; batching is a loop whose per-sample gradients are reduced in a
//! fixed order so results never depend on thread scheduling.

mod adam;
mod conv;
mod stack;
mod tensor;

pub use adam::Adam;
pub use conv::Conv2d;
pub use stack::{Grads, Layer, Stack, Trace};
pub use tensor::{Scalar, Tensor};
