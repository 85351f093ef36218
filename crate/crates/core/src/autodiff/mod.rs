//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Ops are evaluated eagerly as they are recorded; a single backward sweep
//! then yields gradients for every parameter leaf. The op set is exactly what
//! the attribution model needs, including a gradient-reversal node for
//! adversarial training.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_routed, CheckNodes, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId, PROB_EPS};
pub use tensor::Tensor;
