//! Dense `f32`/`f64` tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves created with
//! [`Graph::param`] collect gradients on [`Graph::backward`]; everything else is
//! intermediate and released during the sweep.

pub mod check;
mod params;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use graph::{Graph, PadMode, Var, GABOR_SIGMA_FLOOR};
pub(crate) use graph::log_sum_exp;
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;
