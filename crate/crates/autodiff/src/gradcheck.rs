//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates the function; it never looks at the
//! pullbacks, so it serves as an independent reference for them.

use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are judged by absolute error.
    pub denom_floor: f64,
    /// Coordinates to probe as `(input, flat index)`; `None` probes all.
    pub coords: Option<Vec<(usize, usize)>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            denom_floor: 1e-3,
            coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval<T: Scalar, F>(f: &F, inputs: &[Tensor<T>]) -> Result<f64>
where
    F: Fn(&Tape<T>, &[Var<T>]) -> Result<Var<T>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<T>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    Ok(out.value().item()?.to_f64_lossy())
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences `(f(x + h) - f(x - h)) / 2h` for every requested coordinate.
pub fn check_gradients<T: Scalar, F>(
    f: F,
    inputs: &[Tensor<T>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<T>, &[Var<T>]) -> Result<Var<T>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<T>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if out.value().numel() != 1 {
        return Err(AutodiffError::Contract(
            "gradient check needs a scalar function".into(),
        ));
    }
    let mut grads = tape.backward(&out)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|v| grads.take_or_zero(v)).collect();

    let coords: Vec<(usize, usize)> = match &opts.coords {
        Some(c) => c.clone(),
        None => inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
            .collect(),
    };
    let h = T::from_f64_lossy(opts.step);
    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (input, index) in coords {
        let orig = probe[input].data()[index];
        probe[input].data_mut()[index] = orig + h;
        let plus = eval(&f, &probe)?;
        probe[input].data_mut()[index] = orig - h;
        let minus = eval(&f, &probe)?;
        probe[input].data_mut()[index] = orig;
        // The perturbation actually applied, after rounding to T.
        let span = ((orig + h) - (orig - h)).to_f64_lossy();
        let numeric = (plus - minus) / span;
        let a = analytic[input].data()[index].to_f64_lossy();
        let rel = relative_error(a, numeric, opts.denom_floor);
        report.checked += 1;
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst = Some(Mismatch {
                input,
                index,
                analytic: a,
                numeric,
                rel_err: rel,
            });
        }
    }
    Ok(report)
}
