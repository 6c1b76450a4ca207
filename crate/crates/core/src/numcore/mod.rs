//! Dense `f64` tensors, reverse-mode autodiff and the layers the model needs.

mod gradcheck;
mod graph;
pub mod layers;
mod mask;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GRAD_CHECK_FLOOR};
pub use graph::{softmax_rows, Graph, Var, LAYER_NORM_EPS};
pub use mask::{AttentionMask, BlockBounds, Side};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
