//! IMU sequences and their plain-text file format.
//!
//! ```text
//! dwstrack-imu v1 rate=200 cols=gyro_x,gyro_y,gyro_z,accel_x,accel_y,accel_z,gt_px,gt_py,gt_vx,gt_vy
//! 0.01 -0.002 0.3 0.12 0.05 0 0 0 1 0
//! ...
//! ```
//!
//! Columns are matched by name. The six IMU columns are required; the
//! ground-truth position and velocity pairs are optional. Orientation
//! columns (`ori_w`, `ori_x`, `ori_y`, `ori_z`) are accepted and ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{io_err, Error, Result};

pub const FORMAT_MAGIC: &str = "dwstrack-imu";
pub const FORMAT_VERSION: &str = "v1";

const IMU_COLS: [&str; 6] = ["gyro_x", "gyro_y", "gyro_z", "accel_x", "accel_y", "accel_z"];
const POS_COLS: [&str; 2] = ["gt_px", "gt_py"];
const VEL_COLS: [&str; 2] = ["gt_vx", "gt_vy"];
const IGNORED_COLS: [&str; 4] = ["ori_w", "ori_x", "ori_y", "ori_z"];

#[derive(Debug, Clone, PartialEq)]
pub struct ImuSequence {
    pub id: String,
    pub sample_rate_hz: f64,
    /// rad/s, body axes.
    pub gyro: Vec<[f64; 3]>,
    /// m/s^2.
    pub accel: Vec<[f64; 3]>,
    pub gt_position: Option<Vec<[f64; 2]>>,
    pub gt_velocity: Option<Vec<[f64; 2]>>,
}

impl ImuSequence {
    pub fn len(&self) -> usize {
        self.gyro.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gyro.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.sample_rate_hz
    }

    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 / self.sample_rate_hz
    }

    /// Six input channels at sample `k`: gyro xyz then accel xyz.
    pub fn channels(&self, k: usize) -> [f64; 6] {
        let (g, a) = (self.gyro[k], self.accel[k]);
        [g[0], g[1], g[2], a[0], a[1], a[2]]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Data(format!("{}: sample rate must be positive", self.id)));
        }
        let t = self.len();
        let mut lens = vec![("accel", self.accel.len())];
        if let Some(p) = &self.gt_position {
            lens.push(("gt_position", p.len()));
        }
        if let Some(v) = &self.gt_velocity {
            lens.push(("gt_velocity", v.len()));
        }
        for (name, n) in lens {
            if n != t {
                return Err(Error::Data(format!("{}: {name} has {n} samples, gyro has {t}", self.id)));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut cols: Vec<&str> = IMU_COLS.to_vec();
        if self.gt_position.is_some() {
            cols.extend(POS_COLS);
        }
        if self.gt_velocity.is_some() {
            cols.extend(VEL_COLS);
        }
        let mut out = format!(
            "{FORMAT_MAGIC} {FORMAT_VERSION} rate={} cols={}\n",
            self.sample_rate_hz,
            cols.join(",")
        );
        for k in 0..self.len() {
            let mut row: Vec<f64> = self.channels(k).to_vec();
            if let Some(p) = &self.gt_position {
                row.extend(p[k]);
            }
            if let Some(v) = &self.gt_velocity {
                row.extend(v[k]);
            }
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                // `{}` prints the shortest string that parses back exactly.
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses the text format; `origin` names the source in errors.
    pub fn parse(text: &str, id: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(FORMAT_MAGIC) {
            return Err(perr(1, format!("header must start with `{FORMAT_MAGIC}`")));
        }
        match parts.next() {
            Some(FORMAT_VERSION) => {}
            other => return Err(perr(1, format!("unsupported format version {other:?}"))),
        }
        let (mut rate, mut cols) = (None, None);
        for kv in parts {
            match kv.split_once('=') {
                Some(("rate", v)) => {
                    rate = Some(v.parse::<f64>().map_err(|_| perr(1, format!("bad rate `{v}`")))?)
                }
                Some(("cols", v)) => cols = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
                _ => return Err(perr(1, format!("unexpected header field `{kv}`"))),
            }
        }
        let rate = rate.ok_or_else(|| perr(1, "missing rate=".into()))?;
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(perr(1, format!("rate must be positive, got {rate}")));
        }
        let cols = cols.ok_or_else(|| perr(1, "missing cols=".into()))?;
        for c in &cols {
            let known = [&IMU_COLS[..], &POS_COLS, &VEL_COLS, &IGNORED_COLS].iter().any(|set| set.contains(&c.as_str()));
            if !known {
                return Err(perr(1, format!("unknown column `{c}`")));
            }
            if cols.iter().filter(|d| *d == c).count() > 1 {
                return Err(perr(1, format!("duplicate column `{c}`")));
            }
        }
        let index = |name: &str| cols.iter().position(|c| c == name);
        let mut imu = [0usize; 6];
        for (slot, name) in imu.iter_mut().zip(IMU_COLS) {
            *slot = index(name).ok_or_else(|| perr(1, format!("missing column `{name}`")))?;
        }
        let pair = |names: [&str; 2]| -> Result<Option<[usize; 2]>> {
            match (index(names[0]), index(names[1])) {
                (Some(a), Some(b)) => Ok(Some([a, b])),
                (None, None) => Ok(None),
                (Some(_), None) => Err(perr(1, format!("missing column `{}`", names[1]))),
                (None, Some(_)) => Err(perr(1, format!("missing column `{}`", names[0]))),
            }
        };
        let (pos_idx, vel_idx) = (pair(POS_COLS)?, pair(VEL_COLS)?);

        let mut seq = ImuSequence {
            id: id.to_string(),
            sample_rate_hz: rate,
            gyro: Vec::new(),
            accel: Vec::new(),
            gt_position: pos_idx.map(|_| Vec::new()),
            gt_velocity: vel_idx.map(|_| Vec::new()),
        };
        let mut row = Vec::with_capacity(cols.len());
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            row.clear();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| perr(lineno, format!("cannot parse `{tok}` as a number")))?;
                if !v.is_finite() {
                    return Err(perr(lineno, format!("non-finite value `{tok}`")));
                }
                row.push(v);
            }
            if row.len() != cols.len() {
                return Err(perr(lineno, format!("expected {} columns, found {}", cols.len(), row.len())));
            }
            seq.gyro.push([row[imu[0]], row[imu[1]], row[imu[2]]]);
            seq.accel.push([row[imu[3]], row[imu[4]], row[imu[5]]]);
            if let (Some([a, b]), Some(p)) = (pos_idx, seq.gt_position.as_mut()) {
                p.push([row[a], row[b]]);
            }
            if let (Some([a, b]), Some(v)) = (vel_idx, seq.gt_velocity.as_mut()) {
                v.push([row[a], row[b]]);
            }
        }
        if seq.is_empty() {
            return Err(perr(1, "no samples".into()));
        }
        Ok(seq)
    }
}

/// Reads a sequence file; the id is the file stem.
pub fn load_sequence(path: impl AsRef<Path>) -> Result<ImuSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ImuSequence::parse(&text, &id, &path.display().to_string())
}

pub fn write_sequence(seq: &ImuSequence, path: impl AsRef<Path>) -> Result<()> {
    seq.validate()?;
    let path = path.as_ref();
    std::fs::write(path, seq.to_text()).map_err(io_err(path))
}

/// File name used for a sequence inside a data directory.
pub fn sequence_file_name(id: &str) -> String {
    format!("{id}.imu")
}
