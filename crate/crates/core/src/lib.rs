//! Brownian bridge diffusion for paired image-to-image translation, trained
//! with a teacher/student self-training loop on a synthetic CT benchmark.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bridge;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
