//! Sequences, windows, splits, normalisation and synthetic data.

mod normalize;
mod sequence;
mod split;
pub mod synth;
mod windows;

use std::path::Path;

pub use normalize::{normalize_stats, Normalizer};
pub use sequence::{load_sequence, sequence_file_name, write_sequence, ImuSequence, FORMAT_MAGIC, FORMAT_VERSION};
pub use split::{SplitPart, SplitSpec, SPLIT_FILE};
pub use synth::{synthesize, ImuFrame, MotionProfile, RandomWalkSpec, Segment, SynthSpec};
pub(crate) use windows::mean_velocity;
pub use windows::{batch_tensors, make_windows, ImuWindow, WindowSet, NUM_CHANNELS};

use crate::error::{io_err, Error, Result};

/// Writes sequences as `<id>.imu` plus the split file into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, seqs: &[ImuSequence], split: &SplitSpec) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for s in seqs {
        write_sequence(s, dir.join(sequence_file_name(&s.id)))?;
    }
    split.save(dir.join(SPLIT_FILE))
}

pub fn load_split(dir: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = dir.as_ref().join(SPLIT_FILE);
    if !path.is_file() {
        return Err(Error::Data(format!("split file {} not found", path.display())));
    }
    SplitSpec::load(path)
}

/// Loads the named sequences from `dir`, in the given order.
pub fn load_sequences(dir: impl AsRef<Path>, ids: &[String]) -> Result<Vec<ImuSequence>> {
    ids.iter()
        .map(|id| load_sequence(dir.as_ref().join(sequence_file_name(id))))
        .collect()
}

/// Windows of every sequence, in sequence order.
pub fn windows_for(seqs: &[ImuSequence], len: usize, stride: usize) -> Result<Vec<ImuWindow>> {
    let mut out = Vec::new();
    for s in seqs {
        out.extend(make_windows(s, len, stride)?.windows);
    }
    Ok(out)
}
