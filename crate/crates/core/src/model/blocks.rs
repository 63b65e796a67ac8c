//! Building blocks of a DWSTB. Every function takes the binder, the
//! parameter prefix of the block and a `[B, C, L]` input.

use dws_autodiff::ops::{self, Conv1dSpec};
use dws_autodiff::{Scalar, Var};
use rand::Rng;

use crate::config::{ModelConfig, MSGCU_KERNEL};
use crate::error::Result;
use crate::params::{init_uniform, Binder, ParamStore};

use dws_autodiff::ops::RunningStats;
use dws_autodiff::Tensor;

fn conv<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>, spec: Conv1dSpec) -> Result<Var<T>> {
    let w = b.param(&format!("{prefix}.weight"))?;
    let bias = b.param(&format!("{prefix}.bias"))?;
    Ok(ops::conv1d(x, &w, Some(&bias), spec)?)
}

fn affine<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let w = b.param(&format!("{prefix}.weight"))?;
    let bias = b.param(&format!("{prefix}.bias"))?;
    Ok(ops::affine(x, &w, Some(&bias))?)
}

/// Depthwise conv followed (optionally) by batch norm: the local feature
/// extractor in front of the star product.
pub fn star_local<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>, cfg: &ModelConfig) -> Result<Var<T>> {
    let c = x.shape()[1];
    let h = conv(b, &format!("{prefix}.dw"), x, Conv1dSpec::depthwise(cfg.dw_kernel, c))?;
    if cfg.star_batch_norm {
        b.batch_norm(&h, &format!("{prefix}.bn"))
    } else {
        Ok(h)
    }
}

/// `(W1 h + b1) * (W2 h + b2)` with pointwise convs `C -> M`.
pub fn star_mix<T: Scalar>(b: &Binder<'_, T>, prefix: &str, h: &Var<T>) -> Result<Var<T>> {
    let one = Conv1dSpec::default();
    let a = conv(b, &format!("{prefix}.pw1"), h, one)?;
    let g = conv(b, &format!("{prefix}.pw2"), h, one)?;
    Ok(ops::mul(&a, &g)?)
}

/// The product stage, before projecting back to `C` channels.
pub fn star_product<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>, cfg: &ModelConfig) -> Result<Var<T>> {
    star_mix(b, prefix, &star_local(b, prefix, x, cfg)?)
}

pub fn star_operation<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>, cfg: &ModelConfig) -> Result<Var<T>> {
    let p = star_product(b, prefix, x, cfg)?;
    conv(b, &format!("{prefix}.proj"), &p, Conv1dSpec::default())
}

/// Per-row gate `[B, M, 1]`: `sigmoid(conv_k(mu*avg + xi*std))`, the conv
/// sliding along the row axis with a single feature.
pub fn wing_gate<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>, cfg: &ModelConfig) -> Result<Var<T>> {
    let &[batch, rows, _] = x.shape() else {
        return Err(crate::Error::Config(format!("wing input must be [B, M, L], got {:?}", x.shape())));
    };
    let mu = b.param(&format!("{prefix}.mu"))?;
    let xi = b.param(&format!("{prefix}.xi"))?;
    let avg = ops::scale_by(&ops::adaptive_avg_pool(x)?, &mu)?;
    let std = ops::scale_by(&ops::adaptive_std_pool(x)?, &xi)?;
    let s = ops::reshape(&ops::add(&avg, &std)?, [batch, 1, rows])?;
    let z = conv(b, &format!("{prefix}.conv"), &s, Conv1dSpec::same(cfg.wing_kernel))?;
    Ok(ops::reshape(&ops::sigmoid(&z)?, [batch, rows, 1])?)
}

/// `W_c`, shape `[B, M, 1]`.
pub fn channel_wing<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>, cfg: &ModelConfig) -> Result<Var<T>> {
    wing_gate(b, &format!("{prefix}.wing_c"), x, cfg)
}

/// `W_t`, shape `[B, 1, L]`: the channel-wing computation on the transposed
/// features.
pub fn temporal_wing<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>, cfg: &ModelConfig) -> Result<Var<T>> {
    let (batch, len) = (x.shape()[0], x.shape()[2]);
    let g = wing_gate(b, &format!("{prefix}.wing_t"), &ops::transpose(x)?, cfg)?;
    Ok(ops::reshape(&g, [batch, 1, len])?)
}

/// `W_c * x + W_t * x` with both gates broadcast back onto `x`.
pub fn dual_wing_attention<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>, cfg: &ModelConfig) -> Result<Var<T>> {
    let wc = channel_wing(b, prefix, x, cfg)?;
    let wt = temporal_wing(b, prefix, x, cfg)?;
    Ok(ops::add(&ops::mul(&wc, x)?, &ops::mul(&wt, x)?)?)
}

/// Channel gate `[B, C]`: `C * softmax(FC2(sigmoid(FC1(mean_t x))))`.
pub fn msgcu_gate<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let c = x.shape()[1];
    let pooled = ops::global_avg_pool_time(x)?;
    let h = ops::sigmoid(&affine(b, &format!("{prefix}.fc1"), &pooled)?)?;
    let logits = affine(b, &format!("{prefix}.fc2"), &h)?;
    Ok(ops::scale(&ops::softmax(&logits, 1)?, T::from_f64_lossy(c as f64))?)
}

pub fn msgcu<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let (batch, c) = (x.shape()[0], x.shape()[1]);
    let value = conv(b, &format!("{prefix}.dw"), x, Conv1dSpec::depthwise(MSGCU_KERNEL, c))?;
    let gate = ops::reshape(&msgcu_gate(b, prefix, x)?, [batch, c, 1])?;
    Ok(ops::mul(&gate, &value)?)
}

/// `x' = x + DWSB(star(x))`, then `x' + MSGCU(x')` when enabled.
pub fn dwstb<T: Scalar>(b: &Binder<'_, T>, prefix: &str, x: &Var<T>, cfg: &ModelConfig) -> Result<Var<T>> {
    let s = star_operation(b, &format!("{prefix}.star"), x, cfg)?;
    let x1 = ops::add(x, &dual_wing_attention(b, prefix, &s, cfg)?)?;
    if !cfg.enable_msgcu {
        return Ok(x1);
    }
    let m = msgcu(b, &format!("{prefix}.msgcu"), &x1)?;
    Ok(ops::add(&x1, &m)?)
}

// ---- parameter registration ----

pub(crate) fn add_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut impl Rng,
    prefix: &str,
    (c_out, c_in_per_group, k): (usize, usize, usize),
) {
    let fan_in = c_in_per_group * k;
    store.insert(format!("{prefix}.weight"), init_uniform(rng, &[c_out, c_in_per_group, k], fan_in));
    store.insert(format!("{prefix}.bias"), init_uniform(rng, &[c_out], fan_in));
}

pub(crate) fn add_affine<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, prefix: &str, out: usize, inp: usize) {
    store.insert(format!("{prefix}.weight"), init_uniform(rng, &[out, inp], inp));
    store.insert(format!("{prefix}.bias"), init_uniform(rng, &[out], inp));
}

pub(crate) fn add_batch_norm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, c: usize) {
    store.insert(format!("{prefix}.gamma"), Tensor::ones([c]));
    store.insert(format!("{prefix}.beta"), Tensor::zeros([c]));
    store.insert_stats(prefix, RunningStats::new(c));
}

fn add_wing<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, prefix: &str, k: usize) {
    store.insert(format!("{prefix}.mu"), Tensor::ones([1]));
    store.insert(format!("{prefix}.xi"), Tensor::zeros([1]));
    add_conv(store, rng, &format!("{prefix}.conv"), (1, 1, k));
}

pub(crate) fn add_dwstb<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut impl Rng,
    prefix: &str,
    c: usize,
    cfg: &ModelConfig,
) -> Result<()> {
    let m = cfg.star_hidden(c)?;
    add_conv(store, rng, &format!("{prefix}.star.dw"), (c, 1, cfg.dw_kernel));
    if cfg.star_batch_norm {
        add_batch_norm(store, &format!("{prefix}.star.bn"), c);
    }
    add_conv(store, rng, &format!("{prefix}.star.pw1"), (m, c, 1));
    add_conv(store, rng, &format!("{prefix}.star.pw2"), (m, c, 1));
    add_conv(store, rng, &format!("{prefix}.star.proj"), (c, m, 1));
    add_wing(store, rng, &format!("{prefix}.wing_c"), cfg.wing_kernel);
    add_wing(store, rng, &format!("{prefix}.wing_t"), cfg.wing_kernel);
    if cfg.enable_msgcu {
        let h = cfg.gate_hidden(c)?;
        add_conv(store, rng, &format!("{prefix}.msgcu.dw"), (c, 1, MSGCU_KERNEL));
        add_affine(store, rng, &format!("{prefix}.msgcu.fc1"), h, c);
        add_affine(store, rng, &format!("{prefix}.msgcu.fc2"), c, h);
    }
    Ok(())
}
