//! Gabor anti-aliased residual network with fractal-dimension attention for
//! WiFi channel-state-information (CSI) action recognition.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix it to `f64`, which is what training and gradient checks use.

pub mod antialias;
pub mod autodiff;
pub mod csi;
mod error;
pub mod fractal;
pub mod gabor;
pub mod network;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Model64 = network::Model<f64>;
pub type Model32 = network::Model<f32>;
pub type Dataset64 = network::Dataset<f64>;
