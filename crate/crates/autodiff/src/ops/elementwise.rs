//! Elementwise arithmetic with singleton-axis broadcasting.
//!
//! Operands must have equal rank. Along each axis the extents must match or
//! one of them must be 1. Implicit rank promotion is rejected.

use crate::error::{dim_err, AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(dim_err(op, a, b));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(dim_err(op, a, b)),
        })
        .collect()
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = if shape[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output position with the matching flat offsets into both
/// operands.
fn for_each_pair(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if a == out && b == out {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    let sa = strides_for(a, out);
    let sb = strides_for(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

fn binary<T: Scalar>(
    op: &'static str,
    a: &Var<T>,
    b: &Var<T>,
    f: fn(T, T) -> T,
    da: fn(T, T) -> T,
    db: fn(T, T) -> T,
) -> Result<Var<T>> {
    let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
    let (av, bv) = (a.shared_value(), b.shared_value());
    let n = out_shape.iter().product();
    let mut data = vec![T::zero(); n];
    for_each_pair(&out_shape, av.shape(), bv.shape(), |o, i, j| {
        data[o] = f(av.data()[i], bv.data()[j]);
    });
    let value = Tensor::from_parts(out_shape.clone(), data);
    Var::record(&[a, b], value, move |g| {
        let mut ga = vec![T::zero(); av.numel()];
        let mut gb = vec![T::zero(); bv.numel()];
        for_each_pair(&out_shape, av.shape(), bv.shape(), |o, i, j| {
            let (x, y) = (av.data()[i], bv.data()[j]);
            ga[i] = ga[i] + g.data()[o] * da(x, y);
            gb[j] = gb[j] + g.data()[o] * db(x, y);
        });
        vec![
            Some(Tensor::from_parts(av.shape().to_vec(), ga)),
            Some(Tensor::from_parts(bv.shape().to_vec(), gb)),
        ]
    })
}

pub fn add<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    binary("add", a, b, |x, y| x + y, |_, _| T::one(), |_, _| T::one())
}

pub fn sub<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    binary("sub", a, b, |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
}

/// Hadamard product.
pub fn mul<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
}

/// Multiplies by a compile-time constant.
pub fn scale<T: Scalar>(x: &Var<T>, c: T) -> Result<Var<T>> {
    let value = x.value().map(|v| v * c);
    Var::record(&[x], value, move |g| vec![Some(g.map(|v| v * c))])
}

/// Multiplies every element by a one-element tensor, which is itself
/// differentiable (learnable scalar gains).
pub fn scale_by<T: Scalar>(x: &Var<T>, s: &Var<T>) -> Result<Var<T>> {
    if s.value().numel() != 1 {
        return Err(AutodiffError::Dimension {
            op: "scale_by",
            lhs: x.shape().to_vec(),
            rhs: s.shape().to_vec(),
        });
    }
    let xv = x.shared_value();
    let sv = s.value().data()[0];
    let s_shape = s.shape().to_vec();
    let value = xv.map(|v| v * sv);
    Var::record(&[x, s], value, move |g| {
        let gx = g.map(|v| v * sv);
        let gs: T = g
            .data()
            .iter()
            .zip(xv.data())
            .fold(T::zero(), |acc, (&gi, &xi)| acc + gi * xi);
        vec![Some(gx), Some(Tensor::from_parts(s_shape, vec![gs]))]
    })
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let value = x.value().map(sigmoid_scalar);
    let y = std::rc::Rc::new(value.clone());
    Var::record(&[x], value, move |g| {
        let data = g
            .data()
            .iter()
            .zip(y.data())
            .map(|(&gi, &yi)| gi * yi * (T::one() - yi))
            .collect();
        vec![Some(Tensor::from_parts(y.shape().to_vec(), data))]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([3]));
        let y = sigmoid(&x).unwrap();
        assert_eq!(y.value().data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64([2], &[1e4, -1e4]).unwrap());
        let y = sigmoid(&x).unwrap();
        assert_eq!(y.value().data(), &[1.0, 0.0]);
    }

    #[test]
    fn broadcast_along_singletons() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let col = tape.constant(t(&[2, 1], &[10., 100.]));
        let row = tape.constant(t(&[1, 3], &[1., 0., -1.]));
        let y = mul(&a, &col).unwrap();
        assert_eq!(y.value().data(), &[10., 20., 30., 400., 500., 600.]);
        let z = add(&a, &row).unwrap();
        assert_eq!(z.value().data(), &[2., 2., 2., 5., 5., 5.]);
    }

    #[test]
    fn rank_promotion_is_rejected() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([3]));
        assert!(matches!(mul(&a, &b), Err(AutodiffError::Dimension { .. })));
        let c = tape.constant(Tensor::zeros([2, 2]));
        assert!(matches!(add(&a, &c), Err(AutodiffError::Dimension { .. })));
    }

    #[test]
    fn broadcast_gradient_reduces_over_expanded_axes() {
        let tape = Tape::<f64>::new();
        let a = tape.param(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let col = tape.param(t(&[2, 1], &[2., 3.]));
        let y = mul(&a, &col).unwrap();
        let loss = crate::ops::sum(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&col).unwrap().data(), &[6., 15.]);
        assert_eq!(grads.get(&a).unwrap().data(), &[2., 2., 2., 3., 3., 3.]);
    }
}
