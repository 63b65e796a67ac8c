//! The differentiable operation set used by the network.

mod conv;
mod elementwise;
mod linear;
mod norm;
mod reduce;
mod shape;

pub use conv::{conv1d, Conv1dSpec};
pub use elementwise::{add, mul, scale, scale_by, sigmoid, sub};
pub use linear::affine;
pub use norm::{batch_norm1d, BatchNormConfig, NormMode, RunningStats};
pub use reduce::{global_avg_pool_time, mean, mean_last, softmax, std_last, sum};
pub use shape::{reshape, transpose};

pub(crate) use elementwise::sigmoid_scalar;

/// Adaptive average pooling to a single output: `[.., M, L] -> [.., M, 1]`.
pub fn adaptive_avg_pool<T: crate::Scalar>(x: &crate::Var<T>) -> crate::Result<crate::Var<T>> {
    mean_last(x)
}

/// Adaptive standard-deviation pooling: `[.., M, L] -> [.., M, 1]`, with
/// `sqrt(var + 1e-5)` so the gradient is finite on constant rows.
pub fn adaptive_std_pool<T: crate::Scalar>(x: &crate::Var<T>) -> crate::Result<crate::Var<T>> {
    std_last(x, T::from_f64_lossy(STD_POOL_EPS))
}

pub const STD_POOL_EPS: f64 = 1e-5;
