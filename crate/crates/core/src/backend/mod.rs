//! Differentiable computation: dense tensors, a reverse-mode tape, layer
//! helpers, seeded random streams and a finite-difference oracle.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tensor;

pub use gradcheck::{finite_difference_gradient, max_relative_error};
pub use graph::{Gradients, Graph, Var};
pub use params::{Bound, ParamStore};
pub use rng::{seeded_rng, Rng, RngState};
pub use tensor::Tensor;
