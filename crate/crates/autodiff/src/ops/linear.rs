use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// `y = x Wᵀ + b` applied to every row of `x: [.., in]` with
/// `weight: [out, in]`, `bias: [out]`.
pub fn affine<T: Scalar>(x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    let xs = x.shape().to_vec();
    let ws = weight.shape().to_vec();
    if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[1] {
        return Err(dim_err("affine", &xs, &ws));
    }
    let (out_f, in_f) = (ws[0], ws[1]);
    if let Some(b) = bias {
        if b.shape() != [out_f] {
            return Err(dim_err("affine", b.shape(), &[out_f]));
        }
    }
    let rows = x.value().numel() / in_f;
    let xv = x.shared_value();
    let wv = weight.shared_value();
    let mut y = vec![T::zero(); rows * out_f];
    let (ri, ro) = (in_f as isize, out_f as isize);
    // y = x wᵀ
    T::gemm(rows, in_f, out_f, (xv.data(), ri, 1), (wv.data(), 1, ri), T::zero(), (&mut y, ro, 1));
    if let Some(b) = bias {
        let bd = b.value().data();
        for row in y.chunks_mut(out_f) {
            for (v, &bv) in row.iter_mut().zip(bd) {
                *v = *v + bv;
            }
        }
    }
    let mut out_shape = xs.clone();
    *out_shape.last_mut().unwrap() = out_f;
    let value = Tensor::from_parts(out_shape, y);

    let pullback = move |g: &Tensor<T>| {
        let gd = g.data();
        let mut gx = vec![T::zero(); rows * in_f];
        let mut gw = vec![T::zero(); out_f * in_f];
        let mut gb = vec![T::zero(); out_f];
        // gx = g w, gw = gᵀ x
        T::gemm(rows, out_f, in_f, (gd, ro, 1), (wv.data(), ri, 1), T::zero(), (&mut gx, ri, 1));
        T::gemm(out_f, rows, in_f, (gd, 1, ro), (xv.data(), ri, 1), T::zero(), (&mut gw, ri, 1));
        for row in gd.chunks(out_f) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        vec![
            Some(Tensor::from_parts(xs.clone(), gx)),
            Some(Tensor::from_parts(vec![out_f, in_f], gw)),
            Some(Tensor::from_parts(vec![out_f], gb)),
        ]
    };
    match bias {
        Some(b) => Var::record(&[x, weight, b], value, pullback),
        None => Var::record(&[x, weight], value, move |g| {
            let mut grads = pullback(g);
            grads.pop();
            grads
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn identity_weight() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2], &[3., 4.]).unwrap());
        let w = tape.constant(Tensor::from_f64([2, 2], &[1., 0., 0., 1.]).unwrap());
        let b = tape.constant(Tensor::zeros([2]));
        let y = affine(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.value().data(), &[3., 4.]);
    }

    #[test]
    fn row_sum_plus_bias() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2], &[2., 3.]).unwrap());
        let w = tape.constant(Tensor::from_f64([1, 2], &[1., 1.]).unwrap());
        let b = tape.constant(Tensor::from_f64([1], &[1.]).unwrap());
        let y = affine(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.value().data(), &[6.]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([4, 3]));
        let w = tape.constant(Tensor::zeros([2, 5]));
        let err = affine(&x, &w, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[4, 3]") && msg.contains("[2, 5]"), "{msg}");
    }
}
