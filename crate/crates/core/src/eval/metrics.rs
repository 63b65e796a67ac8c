use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of one relative-error interval, seconds.
pub const RTE_INTERVAL_S: f64 = 60.0;

/// Timestamped planar positions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, positions: Vec<[f64; 2]>) -> Result<Self> {
        if times.len() != positions.len() {
            return Err(Error::Eval(format!(
                "{} timestamps but {} positions",
                times.len(),
                positions.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Eval("timestamps must be strictly increasing".into()));
        }
        Ok(Self { times, positions })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Linear interpolation at `t`; `None` outside the covered span.
    pub fn at(&self, t: f64) -> Option<[f64; 2]> {
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        if t < first || t > last {
            return None;
        }
        let j = self.times.partition_point(|&s| s < t);
        if j < self.len() && self.times[j] == t {
            return Some(self.positions[j]);
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let (p0, p1) = (self.positions[j - 1], self.positions[j]);
        let a = (t - t0) / (t1 - t0);
        Some([p0[0] + a * (p1[0] - p0[0]), p0[1] + a * (p1[1] - p0[1])])
    }

    /// Sum of segment lengths between samples whose times lie in `[t0, t1]`.
    pub fn path_length(&self, t0: f64, t1: f64) -> f64 {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.times[i] >= t0 && self.times[i] <= t1).collect();
        idx.windows(2).map(|w| dist(self.positions[w[0]], self.positions[w[1]])).sum()
    }

    pub fn translated(&self, d: [f64; 2]) -> Self {
        Self {
            times: self.times.clone(),
            positions: self.positions.iter().map(|p| [p[0] + d[0], p[1] + d[1]]).collect(),
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Integrates per-window velocities with the rectangle rule: the position
/// after window `k` is the previous one plus `v_k * window_s`.
pub fn integrate(origin: [f64; 2], t0: f64, window_s: f64, velocities: &[[f64; 2]]) -> Trajectory {
    let mut times = Vec::with_capacity(velocities.len() + 1);
    let mut positions = Vec::with_capacity(velocities.len() + 1);
    let mut p = origin;
    times.push(t0);
    positions.push(p);
    for (k, v) in velocities.iter().enumerate() {
        p = [p[0] + v[0] * window_s, p[1] + v[1] * window_s];
        times.push(t0 + (k + 1) as f64 * window_s);
        positions.push(p);
    }
    Trajectory { times, positions }
}

/// Ground truth sampled at the estimate's timestamps that it covers.
fn aligned(est: &Trajectory, gt: &Trajectory) -> Result<Vec<(f64, [f64; 2], [f64; 2])>> {
    let pairs: Vec<_> = est
        .times
        .iter()
        .zip(&est.positions)
        .filter_map(|(&t, &p)| gt.at(t).map(|g| (t, p, g)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::Eval(format!(
            "trajectories share {} timestamps; at least 2 are needed",
            pairs.len()
        )));
    }
    Ok(pairs)
}

/// Root mean square position error over the estimate's timestamps.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let pairs = aligned(est, gt)?;
    let ss: f64 = pairs.iter().map(|(_, p, g)| dist(*p, *g).powi(2)).sum();
    Ok((ss / pairs.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rte {
    pub value: f64,
    pub intervals: usize,
    /// The trajectory was shorter than one interval and the full-span
    /// error was scaled up to the interval length.
    pub extrapolated: bool,
}

/// Relative trajectory error over consecutive `interval_s` intervals.
///
/// Starting at the first aligned timestamp, each interval ends at the first
/// timestamp at least `interval_s` later and the next interval starts
/// there; a trailing partial interval is dropped. Within an interval the
/// estimate is translated onto the ground truth at its first sample and the
/// RMS position error over the interval's samples is taken. The result is
/// the mean over intervals.
pub fn rte(est: &Trajectory, gt: &Trajectory, interval_s: f64) -> Result<Rte> {
    if !(interval_s > 0.0) {
        return Err(Error::Eval("relative error interval must be positive".into()));
    }
    let pairs = aligned(est, gt)?;
    let anchored_rmse = |i: usize, j: usize| {
        let (_, pi, gi) = pairs[i];
        let ss: f64 = pairs[i..=j]
            .iter()
            .map(|(_, p, g)| dist([p[0] - pi[0], p[1] - pi[1]], [g[0] - gi[0], g[1] - gi[1]]).powi(2))
            .sum();
        (ss / (j - i + 1) as f64).sqrt()
    };
    // Half a microsecond of slack against rounding in accumulated times.
    let tol = 5e-7;
    let mut errs = Vec::new();
    let mut i = 0;
    while let Some(j) = (i + 1..pairs.len()).find(|&j| pairs[j].0 - pairs[i].0 >= interval_s - tol) {
        errs.push(anchored_rmse(i, j));
        i = j;
    }
    if errs.is_empty() {
        let last = pairs.len() - 1;
        let span = pairs[last].0 - pairs[0].0;
        return Ok(Rte {
            value: anchored_rmse(0, last) * interval_s / span,
            intervals: 0,
            extrapolated: true,
        });
    }
    Ok(Rte {
        value: errs.iter().sum::<f64>() / errs.len() as f64,
        intervals: errs.len(),
        extrapolated: false,
    })
}

/// Final position error divided by the ground-truth path length over the
/// estimate's span.
pub fn pde(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let pairs = aligned(est, gt)?;
    let (t0, _, _) = pairs[0];
    let (t1, p, g) = pairs[pairs.len() - 1];
    let length = gt.path_length(t0, t1);
    if !(length > 0.0) {
        return Err(Error::Eval("ground truth does not move; drift is undefined".into()));
    }
    Ok(dist(p, g) / length)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub ate_m: f64,
    pub rte_m: f64,
    pub rte_extrapolated: bool,
    pub pde: f64,
    pub length_m: f64,
}

impl TrajectoryMetrics {
    pub fn compute(est: &Trajectory, gt: &Trajectory) -> Result<Self> {
        let r = rte(est, gt, RTE_INTERVAL_S)?;
        let pairs = aligned(est, gt)?;
        Ok(Self {
            ate_m: ate(est, gt)?,
            rte_m: r.value,
            rte_extrapolated: r.extrapolated,
            pde: pde(est, gt)?,
            length_m: gt.path_length(pairs[0].0, pairs[pairs.len() - 1].0),
        })
    }
}
