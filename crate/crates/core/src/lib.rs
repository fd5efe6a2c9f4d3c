//! Adder neural networks trained by kernel-based progressive distillation
//! from a convolutional teacher.

pub mod arch;
pub mod cli;
pub mod config;
pub mod data;
pub mod diag;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod opcount;
pub mod tensor;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
