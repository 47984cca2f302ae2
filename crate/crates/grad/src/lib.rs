//! Reverse-mode automatic differentiation for small NCHW convolutional
//! networks on the CPU.
//!
//! A [`Graph`] records every operation of one forward pass together with its
//! value. [`Graph::backward`] walks the tape in reverse and returns the
//! gradient of a scalar node with respect to every node that requires one.

mod conv;
pub mod fd;
mod graph;
mod real;
mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, output_shape as conv_output_shape, ConvGeometry};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use real::Real;
pub use tensor::{numel, Shape, Tensor};
