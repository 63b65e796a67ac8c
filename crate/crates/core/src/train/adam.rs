use std::collections::BTreeMap;

use dws_autodiff::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Moments are keyed by parameter name and updated in
/// name order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    pub lr: f64,
    /// Number of steps taken.
    pub t: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, config: AdamConfig) -> Self {
        Self {
            config,
            lr,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update to every trainable parameter. All of them must
    /// carry a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, p) in store.iter() {
            if !p.requires_grad {
                continue;
            }
            if p.grad.is_none() {
                return Err(Error::Optimizer(format!("parameter {name} has no gradient")));
            }
            for (which, buf) in [("first", &self.m), ("second", &self.v)] {
                if let Some(b) = buf.get(name) {
                    if b.shape() != p.value.shape() {
                        return Err(Error::Optimizer(format!("{which} moment of {name} has the wrong shape")));
                    }
                }
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.t as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for (name, p) in store.iter_mut() {
            if !p.requires_grad {
                continue;
            }
            let grad = p.grad.as_ref().expect("checked above");
            let shape = p.value.shape().to_vec();
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(shape.clone()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(shape));
            let iter = p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, g), (mi, vi)) in iter {
                let g = g.to_f64_lossy();
                let mn = beta1 * mi.to_f64_lossy() + (1.0 - beta1) * g;
                let vn = beta2 * vi.to_f64_lossy() + (1.0 - beta2) * g * g;
                *mi = T::from_f64_lossy(mn);
                *vi = T::from_f64_lossy(vn);
                let update = self.lr * (mn / c1) / ((vn / c2).sqrt() + eps);
                *w = T::from_f64_lossy(w.to_f64_lossy() - update);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, p) in store.iter() {
        if let Some(g) = &p.grad {
            sq += g.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for (_, p) in store.iter_mut() {
            if let Some(g) = &mut p.grad {
                for v in g.data_mut() {
                    *v = T::from_f64_lossy(v.to_f64_lossy() * s);
                }
            }
        }
    }
    norm
}
