//! Tensor algebra, reverse-mode differentiation, gradient checking and ADAM.

mod adam;
mod gradcheck;
mod graph;
pub mod kernels;
pub mod ops;
mod params;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use kernels::flops;
pub use params::{Param, ParamStore};
pub use tensor::Tensor;
