//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   "DWSCKPT\0"
//! u32     format version
//! u32 n + n bytes   model configuration, TOML
//! u32 n + n bytes   metadata, TOML (normaliser, optimiser scalars, schedule)
//! u32     entry count
//! entry*  u8 section (0 param, 1 buffer, 2 adam first moment, 3 adam second moment)
//!         u32 n + n bytes name
//!         u32 rank, rank * u32 dims
//!         numel * f32 values
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use dws_autodiff::ops::RunningStats;
use dws_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::{Normalizer, NUM_CHANNELS};
use crate::error::{io_err, Error, Result};
use crate::model::DwsformerModel;
use crate::train::{Adam, AdamConfig, PlateauSchedule, TrainConfig};

pub const MAGIC: &[u8; 8] = b"DWSCKPT\0";
pub const VERSION: u32 = 1;

const SEC_PARAM: u8 = 0;
const SEC_BUFFER: u8 = 1;
const SEC_ADAM_M: u8 = 2;
const SEC_ADAM_V: u8 = 3;

/// Optimiser and schedule state needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    /// Epoch (1-based) with the lowest validation loss so far; 0 if none.
    pub best_epoch: usize,
    pub config: TrainConfig,
    pub adam: Adam<f32>,
    pub schedule: PlateauSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DwsformerModel<f32>,
    pub normalizer: Option<Normalizer>,
    pub train: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormMeta {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainMeta {
    epoch: usize,
    best_epoch: usize,
    adam_steps: u64,
    adam: AdamConfig,
    schedule: PlateauSchedule,
    config: TrainConfig,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Meta {
    #[serde(default)]
    bn_batches: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalizer: Option<NormMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainMeta>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_entry(out: &mut Vec<u8>, section: u8, name: &str, t: &Tensor<f32>) {
    out.push(section);
    put_bytes(out, name.as_bytes());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Tensor::new(shape, data)?)
    }
}

impl Checkpoint {
    pub fn new(model: DwsformerModel<f32>) -> Self {
        Self {
            model,
            normalizer: None,
            train: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.params();
        let mut meta = Meta::default();
        for (name, s) in params.stats_iter() {
            meta.bn_batches.insert(name.clone(), s.batches_tracked);
        }
        meta.normalizer = self.normalizer.as_ref().map(|n| NormMeta {
            mean: n.mean.to_vec(),
            std: n.std.to_vec(),
        });
        meta.train = self.train.as_ref().map(|t| TrainMeta {
            epoch: t.epoch,
            best_epoch: t.best_epoch,
            adam_steps: t.adam.t,
            adam: t.adam.config,
            schedule: t.schedule.clone(),
            config: t.config.clone(),
        });

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_bytes(&mut out, self.model.config().to_toml().as_bytes());
        put_bytes(&mut out, toml::to_string(&meta).expect("meta serialises").as_bytes());

        let mut entries: Vec<(u8, String, Tensor<f32>)> = Vec::new();
        for (name, p) in params.iter() {
            entries.push((SEC_PARAM, name.clone(), p.value.clone()));
        }
        for (name, s) in params.stats_iter() {
            let c = s.mean.len();
            entries.push((SEC_BUFFER, format!("{name}.running_mean"), Tensor::new([c], s.mean.clone()).unwrap()));
            entries.push((SEC_BUFFER, format!("{name}.running_var"), Tensor::new([c], s.var.clone()).unwrap()));
        }
        if let Some(t) = &self.train {
            for (name, m) in &t.adam.m {
                entries.push((SEC_ADAM_M, name.clone(), m.clone()));
            }
            for (name, v) in &t.adam.v {
                entries.push((SEC_ADAM_V, name.clone(), v.clone()));
            }
        }
        put_u32(&mut out, entries.len() as u32);
        for (sec, name, t) in &entries {
            put_entry(&mut out, *sec, name, t);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let config = ModelConfig::from_toml(&r.string()?)?;
        let meta: Meta = toml::from_str(&r.string()?).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;

        let mut model = DwsformerModel::<f32>::new(config, 0)?;
        let mut seen = std::collections::BTreeSet::new();
        let mut buffers: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
        let n = r.u32()?;
        for _ in 0..n {
            let sec = r.u8()?;
            let name = r.string()?;
            let t = r.tensor()?;
            match sec {
                SEC_PARAM => {
                    model
                        .params_mut()
                        .set_value(&name, t)
                        .map_err(|e| Error::Checkpoint(format!("configuration mismatch: {e}")))?;
                    seen.insert(name);
                }
                SEC_BUFFER => {
                    buffers.insert(name, t);
                }
                SEC_ADAM_M => {
                    m.insert(name, t);
                }
                SEC_ADAM_V => {
                    v.insert(name, t);
                }
                other => return Err(Error::Checkpoint(format!("unknown section {other}"))),
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        if seen.len() != model.params().len() {
            let missing: Vec<&String> = model.params().names().filter(|n| !seen.contains(*n)).collect();
            return Err(Error::Checkpoint(format!("configuration mismatch: missing parameters {missing:?}")));
        }
        let bn_names: Vec<String> = model.params().stats_iter().map(|(k, _)| k.clone()).collect();
        for name in &bn_names {
            let mut get = |suffix: &str| {
                buffers
                    .remove(&format!("{name}.{suffix}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing buffer {name}.{suffix}")))
            };
            let (mean, var) = (get("running_mean")?, get("running_var")?);
            let batches_tracked = *meta
                .bn_batches
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing batch count for {name}")))?;
            model.params_mut().set_stats(
                name,
                RunningStats {
                    mean: mean.into_data(),
                    var: var.into_data(),
                    batches_tracked,
                },
            )?;
        }
        if let Some(extra) = buffers.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected buffer {extra}")));
        }

        let normalizer = match meta.normalizer {
            None => None,
            Some(nm) => {
                let arr = |v: Vec<f64>| -> Result<[f64; NUM_CHANNELS]> {
                    v.try_into().map_err(|_| Error::Checkpoint("normaliser must have 6 channels".into()))
                };
                Some(Normalizer {
                    mean: arr(nm.mean)?,
                    std: arr(nm.std)?,
                })
            }
        };
        let train = match meta.train {
            None => None,
            Some(tm) => {
                for (name, t) in m.iter().chain(&v) {
                    let p = model
                        .params()
                        .get(name)
                        .ok_or_else(|| Error::Checkpoint(format!("moment for unknown parameter {name}")))?;
                    if p.value.shape() != t.shape() {
                        return Err(Error::Checkpoint(format!("moment shape mismatch for {name}")));
                    }
                }
                Some(TrainState {
                    epoch: tm.epoch,
                    best_epoch: tm.best_epoch,
                    adam: Adam {
                        config: tm.adam,
                        lr: tm.schedule.lr,
                        t: tm.adam_steps,
                        m,
                        v,
                    },
                    schedule: tm.schedule,
                    config: tm.config,
                })
            }
        };
        Ok(Self {
            model,
            normalizer,
            train,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }
}
