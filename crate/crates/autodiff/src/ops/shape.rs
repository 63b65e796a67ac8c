use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::{split_last2, Tensor};

pub fn reshape<T: Scalar>(x: &Var<T>, shape: impl Into<Vec<usize>>) -> Result<Var<T>> {
    let old = x.shape().to_vec();
    let value = x.value().clone().reshape(shape)?;
    Var::record(&[x], value, move |g| {
        vec![Some(g.clone().reshape(old).expect("same element count"))]
    })
}

fn transpose_data<T: Scalar>(src: &[T], batch: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        let off = b * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[off + c * rows + r] = src[off + r * cols + c];
            }
        }
    }
    out
}

/// Swaps the last two axes: `[.., M, L] -> [.., L, M]`.
pub fn transpose<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    if shape.len() < 2 {
        return Err(AutodiffError::Config {
            op: "transpose",
            msg: format!("needs rank >= 2, got {shape:?}"),
        });
    }
    let (batch, rows, cols) = split_last2(&shape);
    let mut out_shape = shape.clone();
    let n = shape.len();
    out_shape.swap(n - 2, n - 1);
    let value = Tensor::from_parts(
        out_shape,
        transpose_data(x.value().data(), batch, rows, cols),
    );
    Var::record(&[x], value, move |g| {
        let data = transpose_data(g.data(), batch, cols, rows);
        vec![Some(Tensor::from_parts(shape, data))]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn transpose_batched() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64([1, 2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let y = transpose(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2]);
        assert_eq!(y.value().data(), &[1., 4., 2., 5., 3., 6.]);
        let back = transpose(&y).unwrap();
        assert_eq!(back.value(), x.value());
    }

    #[test]
    fn reshape_checks_count() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([2, 3]));
        assert!(reshape(&x, [3, 2]).is_ok());
        assert!(reshape(&x, [4, 2]).is_err());
    }
}
