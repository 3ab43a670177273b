//! Tensors, differentiable operations, losses and the Adam optimizer.

mod adam;
pub mod conv;
mod graph;
pub mod ops;
mod rng;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Eager, Gradients, Graph, Tape, Var};
pub use ops::{Activation, BatchStats, BnMode};
pub use rng::RngStream;
pub use scalar::{DType, Float};
pub use tensor::Tensor;
