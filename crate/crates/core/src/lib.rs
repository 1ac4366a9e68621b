//! Macro-micro hierarchical transformer for exposure correction.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks). Images are `[3, H, W]` tensors with values in `[0, 1]`.

pub mod attention;
pub mod config;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pyramid;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use numeric::{AdamState, Graph, ParamStore, Tensor, Var};
pub use scalar::Scalar;

/// A `[3, H, W]` image, channel-major.
pub type ImageRgb<T> = Tensor<T>;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
