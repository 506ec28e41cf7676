//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Tensors are row-major; image tensors use the `[batch, channels, height,
//! width]` layout. A [`Graph`] records operations on [`Var`] handles and
//! [`Graph::backward`] returns gradients for a chosen subset of leaves.

mod error;
mod float;
mod graph;
pub mod ops;
mod tensor;

pub use error::{Result, TensorError};
pub use float::Float;
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use ops::{concat, BatchStats};
pub use tensor::{broadcast_shape, Tensor};
