use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SequenceResult;
use crate::error::{io_err, Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CDF_ATE_FILE: &str = "cdf_ate.csv";
pub const CDF_MSE_FILE: &str = "cdf_mse.csv";
pub const SUMMARY_FILE: &str = "summary.toml";

const METRICS_HEADER: &str = "sequence,ate_m,rte_m,pde,length_m";
const METRICS_PREAMBLE: &str = "\
# ate_m: RMS distance between estimated and ground-truth positions at the estimate timestamps
# rte_m: mean over consecutive 60 s intervals of the RMS position error after re-anchoring at the interval start
# pde: final position error divided by ground-truth path length
# length_m: ground-truth path length over the evaluated span
";

pub fn trajectory_file_name(id: &str) -> String {
    format!("traj_{id}.csv")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sequence: String,
    pub ate_m: f64,
    pub rte_m: f64,
    pub pde: f64,
    pub length_m: f64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn write_metrics_csv(path: impl AsRef<Path>, results: &[SequenceResult]) -> Result<()> {
    let mut s = format!("{METRICS_PREAMBLE}{METRICS_HEADER}\n");
    for r in results {
        let m = &r.metrics;
        let _ = writeln!(s, "{},{},{},{},{}", r.id, m.ate_m, m.rte_m, m.pde, m.length_m);
    }
    write(path.as_ref(), &s)
}

/// Reads a metrics file, skipping `#` comment lines.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Eval("metrics file has an unexpected header".into()));
    }
    lines
        .map(|line| {
            let bad = || Error::Eval(format!("malformed metrics line: {line}"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(MetricsRow {
                sequence: f[0].to_string(),
                ate_m: num(1)?,
                rte_m: num(2)?,
                pde: num(3)?,
                length_m: num(4)?,
            })
        })
        .collect()
}

/// Empirical CDF: sorted values paired with `i / n`.
pub fn cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

pub fn write_cdf_csv(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let mut s = String::from("value,cumulative_fraction\n");
    for (x, f) in cdf(values) {
        let _ = writeln!(s, "{x},{f}");
    }
    write(path.as_ref(), &s)
}

/// Estimate and interpolated ground truth at the estimate timestamps.
pub fn write_trajectory_csv(path: impl AsRef<Path>, r: &SequenceResult) -> Result<()> {
    let mut s = String::from("t,est_x,est_y,gt_x,gt_y\n");
    for (&t, p) in r.estimate.times.iter().zip(&r.estimate.positions) {
        let g = r.ground_truth.at(t);
        let (gx, gy) = g.map_or((String::new(), String::new()), |g| (g[0].to_string(), g[1].to_string()));
        let _ = writeln!(s, "{t},{},{},{gx},{gy}", p[0], p[1]);
    }
    write(path.as_ref(), &s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub label: String,
    pub sequences: usize,
    pub mean_ate_m: f64,
    pub median_ate_m: f64,
    pub mean_rte_m: f64,
    pub mean_pde: f64,
    pub mean_velocity_mse: f64,
    /// Sequences shorter than one relative-error interval.
    pub rte_extrapolated: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl EvalSummary {
    pub fn from_results(label: &str, results: &[SequenceResult]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::Eval("no sequences were evaluated".into()));
        }
        let ates: Vec<f64> = results.iter().map(|r| r.metrics.ate_m).collect();
        Ok(Self {
            label: label.to_string(),
            sequences: results.len(),
            mean_ate_m: mean(ates.iter().copied()),
            median_ate_m: median(&ates),
            mean_rte_m: mean(results.iter().map(|r| r.metrics.rte_m)),
            mean_pde: mean(results.iter().map(|r| r.metrics.pde)),
            mean_velocity_mse: mean(results.iter().map(|r| r.velocity_mse)),
            rte_extrapolated: results.iter().filter(|r| r.metrics.rte_extrapolated).count(),
        })
    }
}

/// Writes metrics, both CDFs, one trajectory file per sequence and the
/// summary into `dir`.
pub fn write_report(dir: impl AsRef<Path>, label: &str, results: &[SequenceResult]) -> Result<EvalSummary> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let summary = EvalSummary::from_results(label, results)?;
    write_metrics_csv(dir.join(METRICS_FILE), results)?;
    let ates: Vec<f64> = results.iter().map(|r| r.metrics.ate_m).collect();
    let mses: Vec<f64> = results.iter().map(|r| r.velocity_mse).collect();
    write_cdf_csv(dir.join(CDF_ATE_FILE), &ates)?;
    write_cdf_csv(dir.join(CDF_MSE_FILE), &mses)?;
    for r in results {
        write_trajectory_csv(dir.join(trajectory_file_name(&r.id)), r)?;
    }
    let text = toml::to_string(&summary).map_err(|e| Error::Eval(format!("cannot serialise summary: {e}")))?;
    write(&dir.join(SUMMARY_FILE), &text)?;
    Ok(summary)
}
