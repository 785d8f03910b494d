//! Camera/LiDAR fusion by spatial encoding.
//!
//! Tiny CNN backbones turn a camera image and a LiDAR bird's-eye-view
//! histogram into feature pyramids. At three resolutions the two modalities
//! are flattened into tokens, tagged with a 2D sinusoidal position code and a
//! learned per-sensor code, mixed by self-attention and added back onto the
//! feature maps. The final maps are pooled into a 512-wide scene vector that a
//! GRU decoder turns into ego-frame waypoints.
//!
//! All numerics run on a small reverse-mode autodiff tape ([`autodiff`]) that
//! is generic over the scalar type; the model trains in `f32` and is
//! gradient-checked in `f64`.

pub mod autodiff;
pub mod backbone;
pub mod encoding;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod head;
pub mod model;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod sensors;
pub mod tensor;

pub use autodiff::{Gradients, Graph, OpKind, Var};
pub use error::{Error, Result};
pub use params::{Param, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
