use dws_autodiff::{ops, Scalar, Var};

use crate::error::Result;

/// Mean over all elements of `(pred - target)^2`.
pub fn mse_loss<T: Scalar>(pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    if pred.shape() != target.shape() {
        return Err(dws_autodiff::AutodiffError::Dimension {
            op: "mse_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        }
        .into());
    }
    let d = ops::sub(pred, target)?;
    Ok(ops::mean(&ops::mul(&d, &d)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dws_autodiff::{Tape, Tensor};

    #[test]
    fn trivial_values() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_f64([2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::from_f64([2, 2], &[2.0, 3.0, 4.0, 5.0]).unwrap());
        assert_eq!(mse_loss(&a, &a).unwrap().value().item().unwrap(), 0.0);
        assert_eq!(mse_loss(&a, &b).unwrap().value().item().unwrap(), 1.0);
        let c = tape.constant(Tensor::zeros([4]));
        assert!(mse_loss(&a, &c).is_err());
    }
}
