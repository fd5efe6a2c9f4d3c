//! Differentiable layers built on the tape.

pub mod adder;
pub mod basic;
pub mod batchnorm;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod pool;

pub use adder::adder2d;
pub use batchnorm::{BatchNormLayer, Mode};
pub use conv::{conv2d, Geometry};
pub use linear::{linear, matmul_lastdim};
pub use loss::{cross_entropy, mse_mean, soft_cross_entropy, softmax};
pub use pool::{global_avg_pool, max_pool2d};
