//! Minimal reverse-mode automatic differentiation over dense `f64` tensors,
//! plus the layer primitives and optimizer used by the flow model.

mod adam;
mod graph;
mod layers;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{gelu, normal_cdf, sigmoid, softplus, BatchStats, Gradients, Graph, Var};
pub use layers::{batch_norm, check_dropout_rate, dense, dropout, BatchNormConfig, Mode, RunningStats};
pub use tensor::Tensor;
