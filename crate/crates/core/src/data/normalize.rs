use super::windows::{ImuWindow, NUM_CHANNELS};
use crate::error::{Error, Result};

/// Per-channel standardisation fitted on training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; NUM_CHANNELS],
    pub std: [f64; NUM_CHANNELS],
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_CHANNELS],
            std: [1.0; NUM_CHANNELS],
        }
    }

    pub fn apply(&self, w: &ImuWindow) -> ImuWindow {
        let mut out = w.clone();
        self.apply_in_place(&mut out);
        out
    }

    pub fn apply_in_place(&self, w: &mut ImuWindow) {
        let len = w.len;
        for c in 0..NUM_CHANNELS {
            for v in &mut w.features[c * len..(c + 1) * len] {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }

    pub fn invert(&self, w: &ImuWindow) -> ImuWindow {
        let mut out = w.clone();
        let len = w.len;
        for c in 0..NUM_CHANNELS {
            for v in &mut out.features[c * len..(c + 1) * len] {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        out
    }
}

/// Population mean and standard deviation per channel over every sample of
/// every window. A zero standard deviation is replaced by 1.
pub fn normalize_stats(train: &[ImuWindow]) -> Result<Normalizer> {
    if train.is_empty() {
        return Err(Error::Data("cannot fit normalisation on zero windows".into()));
    }
    let mut mean = [0.0; NUM_CHANNELS];
    let mut std = [0.0; NUM_CHANNELS];
    let n: usize = train.iter().map(|w| w.len).sum();
    for c in 0..NUM_CHANNELS {
        let sum: f64 = train.iter().flat_map(|w| w.channel(c)).sum();
        let m = sum / n as f64;
        let ss: f64 = train.iter().flat_map(|w| w.channel(c)).map(|v| (v - m) * (v - m)).sum();
        mean[c] = m;
        let s = (ss / n as f64).sqrt();
        std[c] = if s > 1e-12 {
            s
        } else {
            log::warn!("input channel {c} is constant in the training windows; std clamped to 1");
            1.0
        };
    }
    Ok(Normalizer { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(rows: [Vec<f64>; 6]) -> ImuWindow {
        let len = rows[0].len();
        ImuWindow {
            features: rows.concat(),
            len,
            target: [0.0; 2],
            sequence_id: "s".into(),
            start: 0,
        }
    }

    #[test]
    fn constant_channel_is_clamped_and_zeroed() {
        let w = window([
            vec![3.0; 4],
            vec![1.0, -1.0, 1.0, -1.0],
            vec![0.0; 4],
            vec![0.0; 4],
            vec![0.0; 4],
            vec![0.0; 4],
        ]);
        let n = normalize_stats(std::slice::from_ref(&w)).unwrap();
        assert_eq!(n.std[0], 1.0);
        assert_eq!(n.std[1], 1.0);
        let out = n.apply(&w);
        assert!(out.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(normalize_stats(&[]).is_err());
    }
}
