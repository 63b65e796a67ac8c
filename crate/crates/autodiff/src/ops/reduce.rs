//! Reductions. Sums run sequentially along the last axis so results are
//! reproducible bit for bit.

use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Sum of all elements as a rank-0 tensor.
pub fn sum<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    let total = x.value().data().iter().fold(T::zero(), |a, &v| a + v);
    Var::record(&[x], Tensor::scalar(total), move |g| {
        vec![Some(Tensor::full(shape, g.data()[0]))]
    })
}

/// Mean of all elements as a rank-0 tensor.
pub fn mean<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let n = T::from_usize(x.value().numel()).unwrap();
    let shape = x.shape().to_vec();
    let total = x.value().data().iter().fold(T::zero(), |a, &v| a + v);
    Var::record(&[x], Tensor::scalar(total / n), move |g| {
        vec![Some(Tensor::full(shape, g.data()[0] / n))]
    })
}

fn keepdim(shape: &[usize]) -> Vec<usize> {
    let mut out = shape.to_vec();
    *out.last_mut().unwrap() = 1;
    out
}

/// Mean over the last axis, which is kept with extent 1
/// (adaptive average pooling to one output).
pub fn mean_last<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    let len = *shape.last().ok_or(AutodiffError::Config {
        op: "mean_last",
        msg: "needs at least one axis".into(),
    })?;
    let nrows = x.value().numel() / len;
    let inv = T::one() / T::from_usize(len).unwrap();
    let data = x
        .value()
        .data()
        .chunks_exact(len)
        .map(|r| r.iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect();
    let value = Tensor::from_parts(keepdim(&shape), data);
    Var::record(&[x], value, move |g| {
        let mut gx = Vec::with_capacity(nrows * len);
        for r in 0..nrows {
            let gi = g.data()[r] * inv;
            gx.extend(std::iter::repeat_n(gi, len));
        }
        vec![Some(Tensor::from_parts(shape, gx))]
    })
}

/// Standard deviation over the last axis, computed as
/// `sqrt(population_variance + eps)` so the gradient stays finite for
/// constant rows. The last axis is kept with extent 1.
pub fn std_last<T: Scalar>(x: &Var<T>, eps: T) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    let len = *shape.last().ok_or(AutodiffError::Config {
        op: "std_last",
        msg: "needs at least one axis".into(),
    })?;
    let n = T::from_usize(len).unwrap();
    let xv = x.shared_value();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for r in xv.data().chunks_exact(len) {
        let m = r.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = r.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m)) / n;
        means.push(m);
        stds.push((var + eps).sqrt());
    }
    let value = Tensor::from_parts(keepdim(&shape), stds.clone());
    Var::record(&[x], value, move |g| {
        // d std / d x_i = (x_i - mean) / (n * std)
        let mut gx = Vec::with_capacity(xv.numel());
        for (r, row) in xv.data().chunks_exact(len).enumerate() {
            let k = g.data()[r] / (n * stds[r]);
            gx.extend(row.iter().map(|&v| (v - means[r]) * k));
        }
        vec![Some(Tensor::from_parts(shape, gx))]
    })
}

/// `[.., C, L] -> [.., C]`: average over time with the time axis dropped.
pub fn global_avg_pool_time<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let pooled = mean_last(x)?;
    let mut shape = x.shape().to_vec();
    shape.pop();
    if shape.is_empty() {
        return Err(AutodiffError::Config {
            op: "global_avg_pool_time",
            msg: "needs a channel axis".into(),
        });
    }
    crate::ops::reshape(&pooled, shape)
}

/// Softmax along `axis`, with the row maximum subtracted first.
pub fn softmax<T: Scalar>(x: &Var<T>, axis: usize) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() {
        return Err(AutodiffError::Config {
            op: "softmax",
            msg: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let xd = x.value().data();
    let mut y = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let at = |k: usize| base + k * inner;
            let m = (0..extent).fold(T::neg_infinity(), |m, k| m.max(xd[at(k)]));
            let mut z = T::zero();
            for k in 0..extent {
                let e = (xd[at(k)] - m).exp();
                y[at(k)] = e;
                z = z + e;
            }
            for k in 0..extent {
                y[at(k)] = y[at(k)] / z;
            }
        }
    }
    let yv = Rc::new(Tensor::from_parts(shape.clone(), y));
    let value = (*yv).clone();
    Var::record(&[x], value, move |g| {
        let (gd, yd) = (g.data(), yv.data());
        let mut gx = vec![T::zero(); yd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let at = |k: usize| base + k * inner;
                let dot = (0..extent).fold(T::zero(), |a, k| a + gd[at(k)] * yd[at(k)]);
                for k in 0..extent {
                    gx[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                }
            }
        }
        vec![Some(Tensor::from_parts(shape, gx))]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn pools_of_constant_row() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 3], &[2., 2., 2.]).unwrap());
        assert_eq!(mean_last(&x).unwrap().value().data(), &[2.0]);
        let s = std_last(&x, 1e-5).unwrap();
        assert_eq!(s.shape(), &[1, 1]);
        // zero variance leaves only the regulariser
        assert_eq!(s.value().data()[0], 1e-5f64.sqrt());
        assert!(s.value().data()[0] < 4e-3);
    }

    #[test]
    fn population_std_of_two_points() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 2], &[1., 3.]).unwrap());
        assert_eq!(mean_last(&x).unwrap().value().data(), &[2.0]);
        let s = std_last(&x, 1e-5).unwrap().value().data()[0];
        assert!((s - 1.0).abs() < 1e-5);
        let single = tape.constant(Tensor::from_f64([1, 1], &[7.]).unwrap());
        let s1 = std_last(&single, 0.0).unwrap().value().data()[0];
        assert_eq!(s1, 0.0);
    }

    #[test]
    fn softmax_uniform_and_normalised() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([3]));
        let y = softmax(&x, 0).unwrap();
        for &v in y.value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = tape.constant(Tensor::from_f64([2, 3], &[1000., 1001., 1002., -5., 0., 5.]).unwrap());
        let y = softmax(&big, 1).unwrap();
        assert!(y.value().is_finite());
        let d = y.value().data();
        assert!((d[0] + d[1] + d[2] - 1.0).abs() < 1e-12);
        assert!((d[3] + d[4] + d[5] - 1.0).abs() < 1e-12);
        let cols = softmax(&big, 0).unwrap();
        let d = cols.value().data();
        assert!((d[0] + d[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_f64([3], &[1., -2., 5.]).unwrap());
        let loss = sum(&x).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1., 1., 1.]);
    }

    #[test]
    fn global_pool_drops_time_axis() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64([2, 2, 2], &[1., 3., 0., 0., 2., 2., 5., 7.]).unwrap());
        let y = global_avg_pool_time(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.value().data(), &[2., 0., 2., 6.]);
    }
}
