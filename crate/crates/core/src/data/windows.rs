use dws_autodiff::Tensor;

use super::sequence::ImuSequence;
use crate::error::{Error, Result};

pub const NUM_CHANNELS: usize = 6;

/// One training sample: a `6 x L` block and the mean ground-truth velocity
/// over the same frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    /// Row-major `[6, L]`.
    pub features: Vec<f64>,
    pub len: usize,
    pub target: [f64; 2],
    pub sequence_id: String,
    pub start: usize,
}

impl ImuWindow {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.features[c * self.len..(c + 1) * self.len]
    }
}

/// Windows cut from one sequence, with an explanation when there are none.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<ImuWindow>,
    pub notice: Option<String>,
}

/// Mean of `v[start..start + len]`, summed in index order.
pub(crate) fn mean_velocity(v: &[[f64; 2]], start: usize, len: usize) -> [f64; 2] {
    let mut acc = [0.0; 2];
    for s in &v[start..start + len] {
        acc[0] += s[0];
        acc[1] += s[1];
    }
    [acc[0] / len as f64, acc[1] / len as f64]
}

/// Windows at starts `0, stride, 2*stride, ...` while `start + len <= T`.
pub fn make_windows(seq: &ImuSequence, len: usize, stride: usize) -> Result<WindowSet> {
    if len == 0 || stride == 0 {
        return Err(Error::Data(format!("window length ({len}) and stride ({stride}) must be positive")));
    }
    let vel = seq
        .gt_velocity
        .as_ref()
        .ok_or_else(|| Error::Data(format!("{}: windows need ground-truth velocity", seq.id)))?;
    let t = seq.len();
    if t < len {
        let notice = format!("{}: {t} samples is shorter than the window length {len}; no windows", seq.id);
        log::warn!("{notice}");
        return Ok(WindowSet {
            windows: Vec::new(),
            notice: Some(notice),
        });
    }
    let windows = (0..=(t - len))
        .step_by(stride)
        .map(|start| {
            let mut features = vec![0.0; NUM_CHANNELS * len];
            for k in 0..len {
                let ch = seq.channels(start + k);
                for (c, v) in ch.iter().enumerate() {
                    features[c * len + k] = *v;
                }
            }
            ImuWindow {
                features,
                len,
                target: mean_velocity(vel, start, len),
                sequence_id: seq.id.clone(),
                start,
            }
        })
        .collect();
    Ok(WindowSet { windows, notice: None })
}

/// Stacks windows into `[B, 6, L]` inputs and `[B, 2]` targets.
pub fn batch_tensors(windows: &[&ImuWindow]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = windows.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let len = first.len;
    let mut x = Vec::with_capacity(windows.len() * NUM_CHANNELS * len);
    let mut y = Vec::with_capacity(windows.len() * 2);
    for w in windows {
        if w.len != len {
            return Err(Error::Data("windows in a batch differ in length".into()));
        }
        x.extend(w.features.iter().map(|&v| v as f32));
        y.extend(w.target.iter().map(|&v| v as f32));
    }
    Ok((
        Tensor::new([windows.len(), NUM_CHANNELS, len], x)?,
        Tensor::new([windows.len(), 2], y)?,
    ))
}
