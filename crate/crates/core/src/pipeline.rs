//! Glue between the data, training and evaluation stages.

use std::path::Path;

use rayon::prelude::*;

use crate::data::{self, normalize_stats, ImuSequence, Normalizer, SplitPart, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_sequence, EvalOptions, SequenceResult};
use crate::model::DwsformerModel;
use crate::train::TrainData;

/// Normalised windows plus the normaliser fitted on the training part.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: TrainData,
    pub normalizer: Normalizer,
}

/// Cuts windows from both parts, fits normalisation on the training windows
/// only and applies it to both.
pub fn prepare(train: &[ImuSequence], val: &[ImuSequence], window_len: usize, stride: usize) -> Result<Prepared> {
    let mut tw = data::windows_for(train, window_len, stride)?;
    if tw.is_empty() {
        return Err(Error::Data(format!(
            "no training windows of length {window_len}; are the training sequences long enough?"
        )));
    }
    let mut vw = data::windows_for(val, window_len, stride)?;
    let normalizer = normalize_stats(&tw)?;
    for w in tw.iter_mut().chain(vw.iter_mut()) {
        normalizer.apply_in_place(w);
    }
    Ok(Prepared {
        data: TrainData { train: tw, val: vw },
        normalizer,
    })
}

/// Loads the sequences of one split part from a corpus directory.
pub fn load_part(dir: impl AsRef<Path>, split: &SplitSpec, part: SplitPart) -> Result<Vec<ImuSequence>> {
    data::load_sequences(dir, split.part(part))
}

pub fn prepare_dir(dir: impl AsRef<Path>, window_len: usize, stride: usize) -> Result<(SplitSpec, Prepared)> {
    let dir = dir.as_ref();
    let split = data::load_split(dir)?;
    let train = load_part(dir, &split, SplitPart::Train)?;
    let val = load_part(dir, &split, SplitPart::Val)?;
    let prepared = prepare(&train, &val, window_len, stride)?;
    Ok((split, prepared))
}

/// Evaluates sequences in parallel; results keep the input order.
pub fn evaluate_all(
    model: &DwsformerModel<f32>,
    norm: &Normalizer,
    seqs: &[ImuSequence],
    opts: &EvalOptions,
) -> Result<Vec<SequenceResult>> {
    seqs.par_iter().map(|s| evaluate_sequence(model, norm, s, opts)).collect()
}
