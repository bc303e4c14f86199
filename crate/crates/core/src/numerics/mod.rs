//! Dense tensors, reverse-mode differentiation, Adam and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod sparse;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{log_sigmoid, sigmoid, Graph, Var, LEAKY_SLOPE};
pub use layers::{Linear, Mlp2};
pub use params::{Gradients, ParamEntry, ParamId, ParamStore};
pub use sparse::Csr;
pub use tensor::Tensor;
