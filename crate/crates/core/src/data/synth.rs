//! Planar pedestrian-like motion and the IMU readings it would produce.
//!
//! A profile is a chain of segments. Within a segment the base speed ramps
//! linearly from the previous segment's target to its own, the heading turns
//! at a constant rate, and an optional gait multiplies the speed by
//! `1 + sum_h g_h sin(h * 2 pi f t + psi_h)`. Positions come from closed-form
//! integrals of that velocity, so ground truth carries no integration error.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sequence::ImuSequence;
use crate::error::{Error, Result};

pub const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImuFrame {
    /// Accelerometer axes follow the heading (x forward, y left).
    #[default]
    Body,
    /// Accelerometer axes are the world axes.
    Navigation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration_s: f64,
    /// Base speed reached at the end of the segment, m/s.
    pub target_speed: f64,
    /// rad/s, counter-clockwise positive.
    pub turn_rate: f64,
    /// Instant heading change at the start of the segment, rad.
    #[serde(default)]
    pub pivot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gait {
    pub frequency_hz: f64,
    /// Harmonic `h` (1-based position in the list) oscillates at `h * f`.
    pub harmonics: Vec<Harmonic>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub gyro_std: f64,
    pub accel_std: f64,
    pub gyro_bias_std: f64,
    pub accel_bias_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionProfile {
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub initial_speed: f64,
    #[serde(default)]
    pub initial_heading: f64,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub gait: Option<Gait>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub frame: ImuFrame,
    /// Adds `+g` on the accelerometer z axis.
    #[serde(default)]
    pub gravity: bool,
}

fn field(name: &str, msg: impl Into<String>) -> Error {
    Error::Profile {
        field: name.to_string(),
        msg: msg.into(),
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(field(name, format!("must be finite, got {v}")))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    check_finite(name, v)?;
    if v < 0.0 {
        return Err(field(name, format!("must be non-negative, got {v}")));
    }
    Ok(())
}

impl NoiseSpec {
    fn validate(&self) -> Result<()> {
        check_nonneg("noise.gyro_std", self.gyro_std)?;
        check_nonneg("noise.accel_std", self.accel_std)?;
        check_nonneg("noise.gyro_bias_std", self.gyro_bias_std)?;
        check_nonneg("noise.accel_bias_std", self.accel_bias_std)
    }
}

impl Gait {
    fn validate(&self) -> Result<()> {
        check_nonneg("gait.frequency_hz", self.frequency_hz)?;
        let mut total = 0.0;
        for (i, h) in self.harmonics.iter().enumerate() {
            check_nonneg(&format!("gait.harmonics[{i}].amplitude"), h.amplitude)?;
            check_finite(&format!("gait.harmonics[{i}].phase"), h.phase)?;
            total += h.amplitude;
        }
        if total >= 1.0 {
            return Err(field(
                "gait.harmonics",
                format!("amplitudes sum to {total}; must stay below 1 so speed is never negative"),
            ));
        }
        Ok(())
    }

    fn omega(&self) -> f64 {
        2.0 * PI * self.frequency_hz
    }

    /// Speed multiplier and its time derivative at global time `t`.
    fn factor(&self, t: f64) -> (f64, f64) {
        let w = self.omega();
        let (mut m, mut dm) = (1.0, 0.0);
        for (i, h) in self.harmonics.iter().enumerate() {
            let k = (i + 1) as f64 * w;
            let arg = k * t + h.phase;
            m += h.amplitude * arg.sin();
            dm += h.amplitude * k * arg.cos();
        }
        (m, dm)
    }
}

/// `int_0^tau e^{iks} ds`.
fn i0(k: f64, tau: f64) -> Complex64 {
    let x = k * tau;
    if x.abs() < 1.0 {
        // sum_n tau^{n+1} (ik)^n / (n! (n+1))
        let mut term = Complex64::new(tau, 0.0); // tau^{n+1} (ik)^n / n!
        let mut sum = Complex64::new(0.0, 0.0);
        for n in 0..30 {
            sum += term / (n + 1) as f64;
            term *= Complex64::new(0.0, x) / (n + 1) as f64;
        }
        sum
    } else {
        Complex64::from_polar(1.0, x / 2.0) * (2.0 * (x / 2.0).sin() / k)
    }
}

/// `int_0^tau s e^{iks} ds`.
fn i1(k: f64, tau: f64) -> Complex64 {
    let x = k * tau;
    if x.abs() < 1.0 {
        // sum_n tau^{n+2} (ik)^n / (n! (n+2))
        let mut term = Complex64::new(tau * tau, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        for n in 0..30 {
            sum += term / (n + 2) as f64;
            term *= Complex64::new(0.0, x) / (n + 1) as f64;
        }
        sum
    } else {
        let ik = Complex64::new(0.0, k);
        let kk = 1.0 / (k * k);
        Complex64::from_polar(1.0, x) * (tau / ik + kk) - kk
    }
}

/// Kinematic state at the start of a segment.
#[derive(Debug, Clone, Copy)]
struct SegmentStart {
    t0: f64,
    pos: Complex64,
    heading: f64,
    speed: f64,
}

/// Noise-free kinematics sampled at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicSample {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    /// World-frame acceleration.
    pub acceleration: [f64; 2],
    /// Tangential and normal acceleration in the heading frame.
    pub body_acceleration: [f64; 2],
    pub heading: f64,
    pub turn_rate: f64,
}

impl MotionProfile {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// `round(duration * rate) + 1` samples, the first at `t = 0`.
    pub fn num_samples(&self) -> usize {
        (self.duration() * self.sample_rate_hz).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("sample_rate_hz", self.sample_rate_hz)?;
        if self.sample_rate_hz <= 0.0 {
            return Err(field("sample_rate_hz", "must be positive"));
        }
        check_nonneg("initial_speed", self.initial_speed)?;
        check_finite("initial_heading", self.initial_heading)?;
        if self.segments.is_empty() {
            return Err(field("segments", "at least one segment is required"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            check_finite(&format!("segments[{i}].duration_s"), s.duration_s)?;
            if s.duration_s <= 0.0 {
                return Err(field(&format!("segments[{i}].duration_s"), "must be positive"));
            }
            check_nonneg(&format!("segments[{i}].target_speed"), s.target_speed)?;
            check_finite(&format!("segments[{i}].turn_rate"), s.turn_rate)?;
            check_finite(&format!("segments[{i}].pivot"), s.pivot)?;
        }
        if let Some(g) = &self.gait {
            g.validate()?;
        }
        self.noise.validate()
    }

    fn segment_starts(&self) -> Vec<SegmentStart> {
        let mut out = Vec::with_capacity(self.segments.len());
        let mut cur = SegmentStart {
            t0: 0.0,
            pos: Complex64::new(0.0, 0.0),
            heading: self.initial_heading,
            speed: self.initial_speed,
        };
        for seg in &self.segments {
            cur.heading += seg.pivot;
            out.push(cur);
            let end = self.displacement(seg, &cur, seg.duration_s);
            cur = SegmentStart {
                t0: cur.t0 + seg.duration_s,
                pos: cur.pos + end,
                heading: cur.heading + seg.turn_rate * seg.duration_s,
                speed: seg.target_speed,
            };
        }
        out
    }

    /// Exact displacement `tau` seconds into `seg`.
    fn displacement(&self, seg: &Segment, st: &SegmentStart, tau: f64) -> Complex64 {
        let a = (seg.target_speed - st.speed) / seg.duration_s;
        let w = seg.turn_rate;
        let ramp = |k: f64| i0(k, tau) * st.speed + i1(k, tau) * a;
        let mut acc = ramp(w);
        if let Some(g) = &self.gait {
            let big = g.omega();
            for (i, h) in g.harmonics.iter().enumerate() {
                let hk = (i + 1) as f64 * big;
                let phase = hk * st.t0 + h.phase;
                // sin(x) = (e^{ix} - e^{-ix}) / 2i
                let up = Complex64::from_polar(1.0, phase) * ramp(w + hk);
                let down = Complex64::from_polar(1.0, -phase) * ramp(w - hk);
                acc += (up - down) * h.amplitude / Complex64::new(0.0, 2.0);
            }
        }
        Complex64::from_polar(1.0, st.heading) * acc
    }

    /// Kinematics at every sample time.
    pub fn kinematics(&self) -> Result<Vec<KinematicSample>> {
        self.validate()?;
        let starts = self.segment_starts();
        let n = self.num_samples();
        let mut out = Vec::with_capacity(n);
        let mut seg_idx = 0;
        for k in 0..n {
            let t = k as f64 / self.sample_rate_hz;
            while seg_idx + 1 < self.segments.len() && t >= starts[seg_idx + 1].t0 {
                seg_idx += 1;
            }
            let (seg, st) = (&self.segments[seg_idx], &starts[seg_idx]);
            let tau = t - st.t0;
            let a = (seg.target_speed - st.speed) / seg.duration_s;
            let base = st.speed + a * tau;
            let (m, dm) = self.gait.as_ref().map_or((1.0, 0.0), |g| g.factor(t));
            let u = base * m;
            let du = a * m + base * dm;
            let heading = st.heading + seg.turn_rate * tau;
            let dir = Complex64::from_polar(1.0, heading);
            let pos = st.pos + self.displacement(seg, st, tau);
            let vel = dir * u;
            let body = [du, u * seg.turn_rate];
            let acc = dir * Complex64::new(body[0], body[1]);
            out.push(KinematicSample {
                position: [pos.re, pos.im],
                velocity: [vel.re, vel.im],
                acceleration: [acc.re, acc.im],
                body_acceleration: body,
                heading,
                turn_rate: seg.turn_rate,
            });
        }
        Ok(out)
    }
}

/// Generates one sequence. Ground truth depends only on the profile; the
/// seed drives sensor biases and white noise.
pub fn synthesize(profile: &MotionProfile, seed: u64, id: &str) -> Result<ImuSequence> {
    let kin = profile.kinematics()?;
    let nz = &profile.noise;
    let normal = |s: f64| Normal::new(0.0, s).expect("validated non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gb: [f64; 3] = std::array::from_fn(|_| normal(nz.gyro_bias_std).sample(&mut rng));
    let ab: [f64; 3] = std::array::from_fn(|_| normal(nz.accel_bias_std).sample(&mut rng));
    let (gn, an) = (normal(nz.gyro_std), normal(nz.accel_std));
    let g_z = if profile.gravity { STANDARD_GRAVITY } else { 0.0 };

    let mut seq = ImuSequence {
        id: id.to_string(),
        sample_rate_hz: profile.sample_rate_hz,
        gyro: Vec::with_capacity(kin.len()),
        accel: Vec::with_capacity(kin.len()),
        gt_position: Some(kin.iter().map(|s| s.position).collect()),
        gt_velocity: Some(kin.iter().map(|s| s.velocity).collect()),
    };
    for s in &kin {
        let gyro_true = [0.0, 0.0, s.turn_rate];
        let planar = match profile.frame {
            ImuFrame::Body => s.body_acceleration,
            ImuFrame::Navigation => s.acceleration,
        };
        let acc_true = [planar[0], planar[1], g_z];
        seq.gyro.push(std::array::from_fn(|i| gyro_true[i] + gb[i] + gn.sample(&mut rng)));
        seq.accel.push(std::array::from_fn(|i| acc_true[i] + ab[i] + an.sample(&mut rng)));
    }
    Ok(seq)
}

/// Recipe for random walks: each sequence draws its own segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomWalkSpec {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub segment_duration_s: [f64; 2],
    pub speed_mps: [f64; 2],
    /// Turn rates are drawn from `[-max, max]`.
    pub max_turn_rate: f64,
    /// Chance that a segment walks straight.
    pub straight_probability: f64,
    pub pivot_probability: f64,
    pub max_pivot: f64,
    pub gait_frequency_hz: [f64; 2],
    /// Amplitude of each gait harmonic.
    pub gait_amplitudes: Vec<f64>,
    /// Phase of each harmonic at the start of a stride. Every sequence
    /// shares this waveform and only draws a random stride offset, so the
    /// asymmetric step shape tells forward from backward walking.
    pub gait_phases: Vec<f64>,
    pub noise: NoiseSpec,
    pub frame: ImuFrame,
    pub gravity: bool,
}

impl Default for RandomWalkSpec {
    fn default() -> Self {
        Self {
            sample_rate_hz: 100.0,
            duration_s: 60.0,
            segment_duration_s: [4.0, 12.0],
            speed_mps: [0.5, 1.6],
            max_turn_rate: 0.6,
            straight_probability: 0.3,
            pivot_probability: 0.0,
            max_pivot: PI / 2.0,
            gait_frequency_hz: [1.6, 2.2],
            gait_amplitudes: vec![0.3, 0.12],
            gait_phases: vec![0.0, PI / 2.0],
            noise: NoiseSpec {
                gyro_std: 0.005,
                accel_std: 0.05,
                gyro_bias_std: 0.002,
                accel_bias_std: 0.02,
            },
            frame: ImuFrame::Navigation,
            gravity: false,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    check_finite(name, r[0])?;
    check_finite(name, r[1])?;
    if r[0] > r[1] {
        return Err(field(name, format!("lower bound {} exceeds upper bound {}", r[0], r[1])));
    }
    Ok(())
}

fn draw(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

impl RandomWalkSpec {
    pub fn validate(&self) -> Result<()> {
        check_finite("sample_rate_hz", self.sample_rate_hz)?;
        if self.sample_rate_hz <= 0.0 {
            return Err(field("sample_rate_hz", "must be positive"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(field("duration_s", "must be positive"));
        }
        check_range("segment_duration_s", self.segment_duration_s)?;
        if self.segment_duration_s[0] <= 0.0 {
            return Err(field("segment_duration_s", "must be positive"));
        }
        check_range("speed_mps", self.speed_mps)?;
        if self.speed_mps[0] < 0.0 {
            return Err(field("speed_mps", format!("speed must be non-negative, got {}", self.speed_mps[0])));
        }
        check_nonneg("max_turn_rate", self.max_turn_rate)?;
        for (name, p) in [
            ("straight_probability", self.straight_probability),
            ("pivot_probability", self.pivot_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(field(name, format!("must lie in [0, 1], got {p}")));
            }
        }
        check_nonneg("max_pivot", self.max_pivot)?;
        check_range("gait_frequency_hz", self.gait_frequency_hz)?;
        check_nonneg("gait_frequency_hz", self.gait_frequency_hz[0])?;
        let total: f64 = self.gait_amplitudes.iter().sum();
        if self.gait_amplitudes.iter().any(|a| !(a.is_finite() && *a >= 0.0)) || total >= 1.0 {
            return Err(field("gait_amplitudes", "must be non-negative and sum to less than 1"));
        }
        if self.gait_phases.len() != self.gait_amplitudes.len() {
            return Err(field(
                "gait_phases",
                format!("needs one phase per amplitude ({})", self.gait_amplitudes.len()),
            ));
        }
        if let Some(p) = self.gait_phases.iter().find(|p| !p.is_finite()) {
            return Err(field("gait_phases", format!("must be finite, got {p}")));
        }
        self.noise.validate()
    }

    /// Draws one profile. Segment ends are snapped to the sample grid.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<MotionProfile> {
        self.validate()?;
        let dt = 1.0 / self.sample_rate_hz;
        let total_steps = (self.duration_s * self.sample_rate_hz).round().max(1.0) as usize;
        let mut segments = Vec::new();
        let mut used = 0usize;
        while used < total_steps {
            let d = draw(rng, self.segment_duration_s);
            let steps = ((d / dt).round() as usize).clamp(1, total_steps - used);
            let turn = if rng.random::<f64>() < self.straight_probability {
                0.0
            } else {
                rng.random_range(-1.0..=1.0) * self.max_turn_rate
            };
            let pivot = if !segments.is_empty() && rng.random::<f64>() < self.pivot_probability {
                rng.random_range(-1.0..=1.0) * self.max_pivot
            } else {
                0.0
            };
            segments.push(Segment {
                duration_s: steps as f64 * dt,
                target_speed: draw(rng, self.speed_mps),
                turn_rate: turn,
                pivot,
            });
            used += steps;
        }
        let gait = (!self.gait_amplitudes.is_empty()).then(|| {
            let frequency_hz = draw(rng, self.gait_frequency_hz);
            let offset = rng.random_range(0.0..2.0 * PI);
            let harmonics = self
                .gait_amplitudes
                .iter()
                .zip(&self.gait_phases)
                .enumerate()
                .map(|(i, (&amplitude, &phase))| Harmonic {
                    amplitude,
                    phase: ((i + 1) as f64 * offset + phase).rem_euclid(2.0 * PI),
                })
                .collect();
            Gait { frequency_hz, harmonics }
        });
        let profile = MotionProfile {
            sample_rate_hz: self.sample_rate_hz,
            initial_speed: draw(rng, self.speed_mps),
            initial_heading: rng.random_range(-PI..PI),
            segments,
            gait,
            noise: self.noise.clone(),
            frame: self.frame,
            gravity: self.gravity,
        };
        profile.validate()?;
        Ok(profile)
    }
}

/// Either a fixed profile used for every sequence, or a random-walk recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthSpec {
    Fixed(MotionProfile),
    RandomWalk(RandomWalkSpec),
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Profile {
            field: "<file>".into(),
            msg: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serialises")
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Fixed(p) => p.validate(),
            Self::RandomWalk(r) => r.validate(),
        }
    }

    /// Id of the `i`-th generated sequence.
    pub fn sequence_id(i: usize) -> String {
        format!("seq_{i:03}")
    }

    /// Generates `count` sequences; sequence `i` depends only on
    /// `(seed, i)`.
    pub fn generate(&self, count: usize, seed: u64) -> Result<Vec<ImuSequence>> {
        (0..count)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                let profile = match self {
                    Self::Fixed(p) => p.clone(),
                    Self::RandomWalk(r) => r.sample(&mut rng)?,
                };
                synthesize(&profile, rng.random(), &Self::sequence_id(i))
            })
            .collect()
    }
}
