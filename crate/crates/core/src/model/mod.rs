//! The DWSFormer velocity regressor.

pub mod blocks;
mod cost;

pub use cost::{LayerCost, StageShape};

use dws_autodiff::ops::{self, Conv1dSpec, NormMode};
use dws_autodiff::{Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, DOWNSAMPLE_KERNEL, DOWNSAMPLE_PADDING, DOWNSAMPLE_STRIDE, STEM_KERNEL};
use crate::error::{Error, Result};
use crate::params::{Binder, Bindings, ParamStore};

use blocks::{add_affine, add_batch_norm, add_conv, add_dwstb};

/// Result of one forward pass.
pub struct ForwardPass<T: Scalar> {
    pub output: Var<T>,
    pub bindings: Bindings<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwsformerModel<T: Scalar = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
}

pub fn block_prefix(stage: usize, block: usize) -> String {
    format!("stages.{stage}.blocks.{block}")
}

fn build_store<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let widths = &cfg.stage_widths;
    add_conv(&mut store, &mut rng, "stem", (widths[0], cfg.in_channels, STEM_KERNEL));
    for (i, (&c, &depth)) in widths.iter().zip(&cfg.stage_depths).enumerate() {
        for j in 0..depth {
            add_dwstb(&mut store, &mut rng, &block_prefix(i, j), c, cfg)?;
        }
        if let Some(&next) = widths.get(i + 1) {
            add_conv(&mut store, &mut rng, &format!("stages.{i}.down.conv"), (next, c, DOWNSAMPLE_KERNEL));
            add_batch_norm(&mut store, &format!("stages.{i}.down.bn"), next);
        }
    }
    let last = *widths.last().expect("validated non-empty");
    add_affine(&mut store, &mut rng, "head", cfg.output_dim, last);
    store.set_value("head.bias", Tensor::zeros([cfg.output_dim]))?;
    Ok(store)
}

impl<T: Scalar> DwsformerModel<T> {
    /// Freshly initialised model; the same seed gives the same weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = build_store(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Wraps an existing registry after checking that its names and shapes
    /// are exactly those the configuration implies.
    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let template: ParamStore<T> = build_store(&config, 0)?;
        let mismatch = |what: &str| Error::Checkpoint(format!("parameter set does not match configuration: {what}"));
        if template.len() != params.len() {
            return Err(mismatch(&format!("{} parameters, expected {}", params.len(), template.len())));
        }
        for (name, p) in template.iter() {
            let got = params.get(name).ok_or_else(|| mismatch(&format!("missing {name}")))?;
            if got.value.shape() != p.value.shape() {
                return Err(mismatch(&format!(
                    "{name} has shape {:?}, expected {:?}",
                    got.value.shape(),
                    p.value.shape()
                )));
            }
        }
        for (name, s) in template.stats_iter() {
            let got = params.stats(name).map_err(|_| mismatch(&format!("missing statistics {name}")))?;
            if got.mean.len() != s.mean.len() {
                return Err(mismatch(&format!("statistics {name} have the wrong width")));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Scalar>(&self) -> DwsformerModel<U> {
        DwsformerModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn count_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Multiply-accumulates for one window of length `len`.
    pub fn count_flops(&self, len: usize) -> Result<u64> {
        Ok(self.flop_breakdown(len)?.iter().map(|l| l.macs).sum())
    }

    pub fn flop_breakdown(&self, len: usize) -> Result<Vec<LayerCost>> {
        cost::breakdown(&self.config, len)
    }

    pub fn stage_shapes(&self, len: usize) -> Result<Vec<StageShape>> {
        cost::stage_shapes(&self.config, len)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[_, c, len] = shape else {
            return Err(Error::Config(format!("expected input [B, {}, L], got {shape:?}", self.config.in_channels)));
        };
        if c != self.config.in_channels {
            return Err(Error::Config(format!(
                "expected {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let min = self.config.min_window_len();
        if len < min {
            return Err(Error::WindowTooShort { len, min });
        }
        Ok(())
    }

    /// Runs the network on `x: [B, C_in, L]` through a caller-provided
    /// binder.
    pub fn forward_with(&self, b: &Binder<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        self.check_input(x.shape())?;
        let cfg = &self.config;
        let mut h = {
            let w = b.param("stem.weight")?;
            let bias = b.param("stem.bias")?;
            ops::conv1d(x, &w, Some(&bias), Conv1dSpec::same(STEM_KERNEL))?
        };
        let down = Conv1dSpec {
            stride: DOWNSAMPLE_STRIDE,
            padding: DOWNSAMPLE_PADDING,
            groups: 1,
        };
        for (i, &depth) in cfg.stage_depths.iter().enumerate() {
            for j in 0..depth {
                h = blocks::dwstb(b, &block_prefix(i, j), &h, cfg)?;
            }
            if i + 1 < cfg.num_stages() {
                let w = b.param(&format!("stages.{i}.down.conv.weight"))?;
                let bias = b.param(&format!("stages.{i}.down.conv.bias"))?;
                h = ops::conv1d(&h, &w, Some(&bias), down)?;
                h = b.batch_norm(&h, &format!("stages.{i}.down.bn"))?;
            }
        }
        let pooled = ops::global_avg_pool_time(&h)?;
        let w = b.param("head.weight")?;
        let bias = b.param("head.bias")?;
        Ok(ops::affine(&pooled, &w, Some(&bias))?)
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>, mode: NormMode, track_grad: bool) -> Result<ForwardPass<T>> {
        let b = Binder::new(tape, &self.params, mode, track_grad);
        let output = self.forward_with(&b, x)?;
        Ok(ForwardPass {
            output,
            bindings: b.finish(),
        })
    }

    /// Eval-mode inference on `[B, C_in, L]`, returning `[B, output_dim]`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let pass = self.forward(&tape, &xv, NormMode::Eval, false)?;
        Ok(pass.output.value().clone())
    }
}
