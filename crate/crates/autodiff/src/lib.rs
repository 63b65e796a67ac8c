//! Dense tensors with tape-based reverse-mode automatic differentiation,
//! restricted to the layer set of the DWSFormer inertial-odometry network.
//!
//! Values live in [`Tensor`]; a forward pass records every op on a [`Tape`]
//! and hands back [`Var`] handles. [`Tape::backward`] on a scalar loss
//! returns [`Gradients`] for each differentiable leaf.
//!
//! ```
//! use dws_autodiff::{ops, Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
//! let loss = ops::sum(&ops::mul(&x, &x).unwrap()).unwrap();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
pub mod ops;
mod scalar;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Logistic function on a plain value, matching [`ops::sigmoid`].
pub fn sigmoid<T: Scalar>(v: T) -> T {
    ops::sigmoid_scalar(v)
}
