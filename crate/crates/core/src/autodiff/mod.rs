//! Reverse-mode automatic differentiation over the small op set the
//! denoiser needs, an Adam optimizer and a finite-difference oracle.

mod finite_diff;
mod graph;
mod kernels;
mod optim;

pub use finite_diff::{finite_difference_gradient, max_relative_error};
pub use graph::{Gradients, Graph, NodeId};
pub use optim::{adam_step, AdamConfig, OptimizerState};
