use crate::error::{dim_err, AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalise with batch statistics and produce updated running stats.
    Train,
    /// Normalise with the running statistics.
    Eval,
}

/// Per-channel running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Scalar = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of training batches folded in; zero means uninitialised.
    pub batches_tracked: u64,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            batches_tracked: 0,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.batches_tracked > 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Batch normalisation over `x: [B, C, L]`, statistics taken over batch and
/// time. In train mode the second return value carries the running stats
/// after folding in this batch (unbiased variance, as is conventional); the
/// caller decides whether to commit them.
pub fn batch_norm1d<T: Scalar>(
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    stats: &RunningStats<T>,
    mode: NormMode,
    cfg: BatchNormConfig,
) -> Result<(Var<T>, Option<RunningStats<T>>)> {
    let xs = x.shape().to_vec();
    let [batch, ch, len] = xs[..] else {
        return Err(dim_err("batch_norm1d", &xs, gamma.shape()));
    };
    if gamma.shape() != [ch] || beta.shape() != [ch] || stats.mean.len() != ch {
        return Err(dim_err("batch_norm1d", &xs, gamma.shape()));
    }
    let n = batch * len;
    let eps = T::from_f64_lossy(cfg.eps);
    let xv = x.shared_value();
    let xd = xv.data();
    let at = move |b: usize, c: usize| (b * ch + c) * len;

    let (mean, var, updated) = match mode {
        NormMode::Train => {
            if n < 2 {
                return Err(AutodiffError::Config {
                    op: "batch_norm1d",
                    msg: format!("train mode needs B*L >= 2, got {n}"),
                });
            }
            let nf = T::from_usize(n).unwrap();
            let mut mean = vec![T::zero(); ch];
            let mut var = vec![T::zero(); ch];
            for c in 0..ch {
                let mut s = T::zero();
                for b in 0..batch {
                    s = xd[at(b, c)..][..len].iter().fold(s, |a, &v| a + v);
                }
                let m = s / nf;
                let mut ss = T::zero();
                for b in 0..batch {
                    ss = xd[at(b, c)..][..len]
                        .iter()
                        .fold(ss, |a, &v| a + (v - m) * (v - m));
                }
                mean[c] = m;
                var[c] = ss / nf;
            }
            let mom = T::from_f64_lossy(cfg.momentum);
            let unbias = nf / (nf - T::one());
            let next = RunningStats {
                mean: (0..ch)
                    .map(|c| (T::one() - mom) * stats.mean[c] + mom * mean[c])
                    .collect(),
                var: (0..ch)
                    .map(|c| (T::one() - mom) * stats.var[c] + mom * var[c] * unbias)
                    .collect(),
                batches_tracked: stats.batches_tracked + 1,
            };
            (mean, var, Some(next))
        }
        NormMode::Eval => {
            if !stats.is_initialized() {
                return Err(AutodiffError::State(
                    "batch norm evaluated before any running statistics were collected".into(),
                ));
            }
            (stats.mean.clone(), stats.var.clone(), None)
        }
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gv = gamma.value().data().to_vec();
    let bv = beta.value().data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for b in 0..batch {
        for c in 0..ch {
            let o = at(b, c);
            for t in 0..len {
                let h = (xd[o + t] - mean[c]) * inv_std[c];
                xhat[o + t] = h;
                y[o + t] = gv[c] * h + bv[c];
            }
        }
    }
    let value = Tensor::from_parts(xs.clone(), y);
    let out = Var::record(&[x, gamma, beta], value, move |g| {
        let gd = g.data();
        let mut gx = vec![T::zero(); gd.len()];
        let mut ggamma = vec![T::zero(); ch];
        let mut gbeta = vec![T::zero(); ch];
        for c in 0..ch {
            let (mut sg, mut sgh) = (T::zero(), T::zero());
            for b in 0..batch {
                let o = at(b, c);
                for t in 0..len {
                    sg = sg + gd[o + t];
                    sgh = sgh + gd[o + t] * xhat[o + t];
                }
            }
            ggamma[c] = sgh;
            gbeta[c] = sg;
            let k = gv[c] * inv_std[c];
            match mode {
                NormMode::Train => {
                    let nf = T::from_usize(n).unwrap();
                    for b in 0..batch {
                        let o = at(b, c);
                        for t in 0..len {
                            gx[o + t] = k * (gd[o + t] - sg / nf - xhat[o + t] * sgh / nf);
                        }
                    }
                }
                NormMode::Eval => {
                    for b in 0..batch {
                        let o = at(b, c);
                        for t in 0..len {
                            gx[o + t] = k * gd[o + t];
                        }
                    }
                }
            }
        }
        vec![
            Some(Tensor::from_parts(xs, gx)),
            Some(Tensor::from_parts(vec![ch], ggamma)),
            Some(Tensor::from_parts(vec![ch], gbeta)),
        ]
    })?;
    Ok((out, updated))
}
