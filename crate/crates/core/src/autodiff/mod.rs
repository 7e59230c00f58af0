//! Dense tensors with reverse-mode automatic differentiation.

pub mod conv;
pub mod gradcheck;
mod graph;
pub mod norm;
pub mod sample;
mod tensor;

pub use gradcheck::{compare_gradient, compare_gradient_steps, finite_diff_check, GradCheckReport};
pub use graph::{GradientMap, Graph, NodeId};
pub use norm::{BatchNormMode, BatchNormOptions, BatchStats, RunningStats};
pub use tensor::Tensor;
