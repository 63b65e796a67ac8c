//! Run configuration and manifests.

use std::path::{Path, PathBuf};

use dwsformer::eval::EvalOptions;
use dwsformer::train::TrainConfig;
use dwsformer::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::args::Command;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub batch_size: usize,
    /// Average overlapping predictions at this stride; off when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_stride: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let d = EvalOptions::default();
        Self {
            batch_size: d.batch_size,
            fusion_stride: d.fusion_stride,
        }
    }
}

impl EvalConfig {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            batch_size: self.batch_size,
            fusion_stride: self.fusion_stride,
        }
    }
}

/// Everything a command may be configured with. Values come from the
/// defaults, then the `--config` file, then command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Record of a command invocation, written before any work starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub config: RunConfig,
    pub command: Command,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid manifest {}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| dwsformer::Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| CliError::Usage(format!("cannot serialise manifest: {e}")))?;
        std::fs::write(&path, text).map_err(|source| dwsformer::Error::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}
