use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architectural hyperparameters of a DWSFormer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Samples per input window.
    pub window_len: usize,
    /// Channel width of each stage. The stem projects to the first width.
    pub stage_widths: Vec<usize>,
    /// Number of DWSTBs in each stage.
    pub stage_depths: Vec<usize>,
    /// Star hidden width is `star_expansion * C`, which must be integral.
    pub star_expansion: f64,
    pub dw_kernel: usize,
    pub wing_kernel: usize,
    /// MSGCU gate hidden width is `floor(gate_hidden_ratio * C)`.
    pub gate_hidden_ratio: f64,
    pub output_dim: usize,
    pub enable_msgcu: bool,
    /// Batch norm after the star depthwise conv.
    pub star_batch_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 6,
            window_len: 200,
            stage_widths: vec![32, 64, 128, 384],
            stage_depths: vec![2, 2, 2, 2],
            star_expansion: 2.0,
            dw_kernel: 3,
            wing_kernel: 3,
            gate_hidden_ratio: 0.25,
            output_dim: 2,
            enable_msgcu: true,
            star_batch_norm: true,
        }
    }
}

/// Kernel, stride and padding of the between-stage downsampling conv.
pub const DOWNSAMPLE_KERNEL: usize = 3;
pub const DOWNSAMPLE_STRIDE: usize = 3;
pub const DOWNSAMPLE_PADDING: usize = 1;
pub const STEM_KERNEL: usize = 3;
pub const MSGCU_KERNEL: usize = 3;

impl ModelConfig {
    /// The MSGCU-free ablation of this configuration.
    pub fn ablation(&self) -> Self {
        Self {
            enable_msgcu: false,
            ..self.clone()
        }
    }

    /// A small two-stage network for tests and smoke runs.
    pub fn reduced() -> Self {
        Self {
            window_len: 50,
            stage_widths: vec![8, 16],
            stage_depths: vec![1, 1],
            ..Self::default()
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_widths.len()
    }

    pub fn total_depth(&self) -> usize {
        self.stage_depths.iter().sum()
    }

    pub fn star_hidden(&self, channels: usize) -> Result<usize> {
        let m = self.star_expansion * channels as f64;
        if m < 1.0 || (m - m.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "star_expansion {} times width {channels} is not a positive integer",
                self.star_expansion
            )));
        }
        Ok(m.round() as usize)
    }

    pub fn gate_hidden(&self, channels: usize) -> Result<usize> {
        let h = (self.gate_hidden_ratio * channels as f64 + 1e-9).floor() as usize;
        if h < 1 {
            return Err(Error::Config(format!(
                "gate hidden width for {channels} channels is below 1 (ratio {})",
                self.gate_hidden_ratio
            )));
        }
        Ok(h)
    }

    /// Shortest window the stage pyramid accepts: each stride-3 reduction
    /// must see at least three samples.
    pub fn min_window_len(&self) -> usize {
        DOWNSAMPLE_STRIDE.pow(self.num_stages().saturating_sub(1) as u32)
    }

    /// Sequence length after `n` downsampling convs.
    pub fn stage_len(&self, len: usize, n: usize) -> usize {
        (0..n).fold(len, |l, _| {
            (l + 2 * DOWNSAMPLE_PADDING - DOWNSAMPLE_KERNEL) / DOWNSAMPLE_STRIDE + 1
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.stage_depths.len() {
            return bad(format!(
                "stage_widths {:?} and stage_depths {:?} must be non-empty and equally long",
                self.stage_widths, self.stage_depths
            ));
        }
        if self.stage_widths.contains(&0) {
            return bad("stage widths must be positive".into());
        }
        if self.stage_widths.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!("stage widths {:?} must be non-decreasing", self.stage_widths));
        }
        for (name, k) in [("dw_kernel", self.dw_kernel), ("wing_kernel", self.wing_kernel)] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if !(2..=3).contains(&self.output_dim) {
            return bad(format!("output_dim must be 2 or 3, got {}", self.output_dim));
        }
        if self.window_len < self.min_window_len() {
            return bad(format!(
                "window_len {} is below the minimum {} for {} stages",
                self.window_len,
                self.min_window_len(),
                self.num_stages()
            ));
        }
        for &c in &self.stage_widths {
            self.star_hidden(c)?;
            if self.enable_msgcu {
                self.gate_hidden(c)?;
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}
