//! Trajectory reconstruction, error metrics and report files.

mod export;
mod metrics;

pub use export::{
    cdf, parse_metrics_csv, trajectory_file_name, write_cdf_csv, write_metrics_csv, write_report, write_trajectory_csv,
    EvalSummary, MetricsRow, CDF_ATE_FILE, CDF_MSE_FILE, METRICS_FILE, SUMMARY_FILE,
};
pub use metrics::{ate, integrate, pde, rte, Rte, Trajectory, TrajectoryMetrics, RTE_INTERVAL_S};

use dws_autodiff::Tensor;

use crate::data::{ImuSequence, ImuWindow, Normalizer, NUM_CHANNELS};
use crate::error::{Error, Result};
use crate::model::DwsformerModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub batch_size: usize,
    /// Also predict on windows at this stride and average the overlapping
    /// predictions per sample before integrating.
    pub fusion_stride: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 128,
            fusion_stride: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub id: String,
    /// One velocity per non-overlapping window.
    pub velocities: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
    pub estimate: Trajectory,
    pub ground_truth: Trajectory,
    pub metrics: TrajectoryMetrics,
    /// Mean squared velocity error over the non-overlapping windows.
    pub velocity_mse: f64,
}

/// Normalised input window starting at `start`; the target is left zero.
fn feature_window(seq: &ImuSequence, start: usize, len: usize, norm: &Normalizer) -> ImuWindow {
    let mut features = vec![0.0; NUM_CHANNELS * len];
    for k in 0..len {
        for (c, v) in seq.channels(start + k).iter().enumerate() {
            features[c * len + k] = (v - norm.mean[c]) / norm.std[c];
        }
    }
    ImuWindow {
        features,
        len,
        target: [0.0; 2],
        sequence_id: seq.id.clone(),
        start,
    }
}

fn predict_starts(
    model: &DwsformerModel<f32>,
    norm: &Normalizer,
    seq: &ImuSequence,
    starts: &[usize],
    batch_size: usize,
) -> Result<Vec<[f64; 2]>> {
    let len = model.config().window_len;
    let mut out = Vec::with_capacity(starts.len());
    for chunk in starts.chunks(batch_size.max(1)) {
        let mut x = Vec::with_capacity(chunk.len() * NUM_CHANNELS * len);
        for &s in chunk {
            x.extend(feature_window(seq, s, len, norm).features.iter().map(|&v| v as f32));
        }
        let pred = model.predict(&Tensor::new([chunk.len(), NUM_CHANNELS, len], x)?)?;
        out.extend(pred.data().chunks(2).map(|p| [p[0] as f64, p[1] as f64]));
    }
    Ok(out)
}

/// Number of non-overlapping windows whose end boundary is still a sample:
/// `floor((T - 1) / L)`.
pub fn num_eval_windows(seq_len: usize, window_len: usize) -> usize {
    seq_len.saturating_sub(1) / window_len
}

/// Per-window velocity predictions for the non-overlapping windows.
pub fn predict_velocities(
    model: &DwsformerModel<f32>,
    norm: &Normalizer,
    seq: &ImuSequence,
    opts: &EvalOptions,
) -> Result<Vec<[f64; 2]>> {
    let len = model.config().window_len;
    let n = num_eval_windows(seq.len(), len);
    if n == 0 {
        return Err(Error::Eval(format!(
            "{}: {} samples is too short for a {len}-sample window",
            seq.id,
            seq.len()
        )));
    }
    let blocks: Vec<usize> = (0..n).map(|k| k * len).collect();
    let Some(stride) = opts.fusion_stride else {
        return predict_starts(model, norm, seq, &blocks, opts.batch_size);
    };
    if stride == 0 {
        return Err(Error::Eval("fusion stride must be positive".into()));
    }
    let mut starts: Vec<usize> = (0..=seq.len() - len).step_by(stride).chain(blocks).collect();
    starts.sort_unstable();
    starts.dedup();
    let preds = predict_starts(model, norm, seq, &starts, opts.batch_size)?;
    let covered = n * len;
    let mut sum = vec![[0.0f64; 2]; covered];
    let mut count = vec![0usize; covered];
    for (&s, p) in starts.iter().zip(&preds) {
        for k in s..(s + len).min(covered) {
            sum[k][0] += p[0];
            sum[k][1] += p[1];
            count[k] += 1;
        }
    }
    Ok((0..n)
        .map(|b| {
            let mut acc = [0.0; 2];
            for k in b * len..(b + 1) * len {
                acc[0] += sum[k][0] / count[k] as f64;
                acc[1] += sum[k][1] / count[k] as f64;
            }
            [acc[0] / len as f64, acc[1] / len as f64]
        })
        .collect())
}

/// Predicts, integrates from `origin` and returns the velocities with the
/// reconstructed trajectory.
pub fn predict_trajectory(
    model: &DwsformerModel<f32>,
    norm: &Normalizer,
    seq: &ImuSequence,
    origin: [f64; 2],
    opts: &EvalOptions,
) -> Result<(Vec<[f64; 2]>, Trajectory)> {
    let v = predict_velocities(model, norm, seq, opts)?;
    let window_s = model.config().window_len as f64 * seq.dt();
    let traj = integrate(origin, seq.time(0), window_s, &v);
    Ok((v, traj))
}

pub fn ground_truth_trajectory(seq: &ImuSequence) -> Result<Trajectory> {
    let pos = seq
        .gt_position
        .as_ref()
        .ok_or_else(|| Error::Eval(format!("{}: no ground-truth positions", seq.id)))?;
    Trajectory::new((0..seq.len()).map(|k| seq.time(k)).collect(), pos.clone())
}

/// Reconstructs the trajectory of a sequence with ground truth, starting
/// from the true initial position, and scores it.
pub fn evaluate_sequence(
    model: &DwsformerModel<f32>,
    norm: &Normalizer,
    seq: &ImuSequence,
    opts: &EvalOptions,
) -> Result<SequenceResult> {
    let gt = ground_truth_trajectory(seq)?;
    let vel = seq
        .gt_velocity
        .as_ref()
        .ok_or_else(|| Error::Eval(format!("{}: no ground-truth velocities", seq.id)))?;
    let (velocities, estimate) = predict_trajectory(model, norm, seq, gt.positions[0], opts)?;
    let len = model.config().window_len;
    let targets: Vec<[f64; 2]> = (0..velocities.len())
        .map(|k| crate::data::mean_velocity(vel, k * len, len))
        .collect();
    let se: f64 = velocities
        .iter()
        .zip(&targets)
        .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
        .sum();
    let velocity_mse = se / (2 * velocities.len()) as f64;
    let metrics = TrajectoryMetrics::compute(&estimate, &gt)?;
    Ok(SequenceResult {
        id: seq.id.clone(),
        velocities,
        targets,
        estimate,
        ground_truth: gt,
        metrics,
        velocity_mse,
    })
}
