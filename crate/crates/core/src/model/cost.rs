//! Analytic cost accounting.
//!
//! FLOPs are multiply-accumulates (MACs) for one window:
//! - conv1d: `C_out * (C_in / groups) * k * L_out`
//! - affine: `in * out`
//! - elementwise products: one per output element (star product, both wing
//!   gate applications, the MSGCU gate application)
//! - wing convs: `k` per position of the sequence they slide along
//!
//! Batch norm, pooling, sigmoid, softmax and residual adds are not counted.

use crate::config::{ModelConfig, DOWNSAMPLE_KERNEL, DOWNSAMPLE_PADDING, DOWNSAMPLE_STRIDE, MSGCU_KERNEL, STEM_KERNEL};
use crate::error::{Error, Result};

use super::block_prefix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub macs: u64,
}

/// Feature map entering each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub stage: usize,
    pub channels: usize,
    pub len: usize,
}

pub(super) fn stage_shapes(cfg: &ModelConfig, len: usize) -> Result<Vec<StageShape>> {
    cfg.validate()?;
    let min = cfg.min_window_len();
    if len < min {
        return Err(Error::WindowTooShort { len, min });
    }
    Ok(cfg
        .stage_widths
        .iter()
        .enumerate()
        .map(|(stage, &channels)| StageShape {
            stage,
            channels,
            len: cfg.stage_len(len, stage),
        })
        .collect())
}

fn conv_macs(c_out: usize, c_in_per_group: usize, k: usize, l_out: usize) -> u64 {
    (c_out * c_in_per_group * k * l_out) as u64
}

pub(super) fn breakdown(cfg: &ModelConfig, len: usize) -> Result<Vec<LayerCost>> {
    let shapes = stage_shapes(cfg, len)?;
    let mut out = Vec::new();
    let mut push = |name: String, macs: u64| out.push(LayerCost { name, macs });

    push("stem".into(), conv_macs(cfg.stage_widths[0], cfg.in_channels, STEM_KERNEL, len));
    for s in &shapes {
        let (c, l) = (s.channels, s.len);
        let m = cfg.star_hidden(c)?;
        for j in 0..cfg.stage_depths[s.stage] {
            let p = block_prefix(s.stage, j);
            let star = conv_macs(c, 1, cfg.dw_kernel, l)
                + 2 * conv_macs(m, c, 1, l)
                + (m * l) as u64
                + conv_macs(c, m, 1, l);
            push(format!("{p}.star"), star);
            let wings = (cfg.wing_kernel * c + cfg.wing_kernel * l + 2 * c * l) as u64;
            push(format!("{p}.wings"), wings);
            if cfg.enable_msgcu {
                let h = cfg.gate_hidden(c)?;
                let msgcu = conv_macs(c, 1, MSGCU_KERNEL, l) + (2 * h * c) as u64 + (c * l) as u64;
                push(format!("{p}.msgcu"), msgcu);
            }
        }
        if let Some(&next) = cfg.stage_widths.get(s.stage + 1) {
            let l_out = (l + 2 * DOWNSAMPLE_PADDING - DOWNSAMPLE_KERNEL) / DOWNSAMPLE_STRIDE + 1;
            push(format!("stages.{}.down", s.stage), conv_macs(next, c, DOWNSAMPLE_KERNEL, l_out));
        }
    }
    let last = *cfg.stage_widths.last().expect("validated");
    push("head".into(), (last * cfg.output_dim) as u64);
    Ok(out)
}
