//! Minimal reverse-mode network library: tensors, a gradient tape, the layer
//! primitives of the two cross-modal models, Adam and checkpointing.

mod adam;
mod checkpoint;
mod gradcheck;
mod network;
mod tape;
mod tensor;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, STEP as GRAD_CHECK_STEP};
pub use network::{Activation, LayerSpec, Network, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

#[cfg(test)]
mod tests;
