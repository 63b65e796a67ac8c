use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const SPLIT_FILE: &str = "splits.toml";

/// Sequence-level train/val/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitPart {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            _ => Err(Error::Data(format!("unknown split `{s}` (expected train, val or test)"))),
        }
    }
}

impl SplitSpec {
    /// 8:1:1 by sequence count after a seeded shuffle. Validation and test
    /// each get `round(n / 10)` sequences, the rest go to training.
    pub fn new(ids: &[String], seed: u64) -> Self {
        let mut shuffled = ids.to_vec();
        shuffled.sort();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = shuffled.len();
        let k = (n as f64 * 0.1).round() as usize;
        if n > 0 && k == 0 {
            log::warn!("{n} sequence(s) is too few for a validation/test split; all go to training");
        }
        let test = shuffled.split_off(n - k);
        let val = shuffled.split_off(n - 2 * k);
        Self {
            seed,
            train: shuffled,
            val,
            test,
        }
    }

    pub fn part(&self, p: SplitPart) -> &[String] {
        match p {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::Data(format!("sequence `{id}` appears in more than one split")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("split serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Data(format!("bad split file: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(io_err(path))
    }
}
