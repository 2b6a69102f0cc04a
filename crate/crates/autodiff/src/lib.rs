//! A small reverse-mode automatic differentiation engine over dense `f64`
//! tensors.
//!
//! A [`Graph`] is a Wengert list: every operation on a [`Var`] appends a node
//! holding the forward value and, when gradients are being recorded, a
//! closure that maps the node's output gradient to gradients of its inputs.
//! Nodes are created in topological order, so [`Graph::backward`] simply
//! walks them in reverse.
//!
//! The operator set is the one a time-frequency declipping network and its
//! spectral training loss need: elementwise arithmetic, reductions,
//! reshaping, matrix products, strided and grouped convolutions, softmax,
//! statistics normalisation, fused multi-head attention and real FFTs.

mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod ops;
mod params;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{Graph, Var};
pub use ops::attention::attention_weights;
pub use ops::conv::{Conv1dSpec, Conv2dSpec};
pub use ops::nn::NORM_EPS;
pub use params::{ParamStore, Parameter};
pub use tensor::Tensor;
