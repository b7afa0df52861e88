//! Dense tensors, value-level kernels and reverse-mode differentiation.

mod gradcheck;
mod graph;
pub mod ops;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, GRAD_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use ops::{cosine_sim, layer_norm, mean_pool, softmax, topk_indices, COSINE_EPS};
pub use params::{Param, ParamGrads, ParamStore};
pub(crate) use params::hex_digest;
pub use tensor::Tensor;
