//! Files written by runs: metrics streams and checkpoints.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::{Method, RunConfig};
use super::data::NormStats;
use crate::error::{Error, Result};
use crate::nn::ParamRecord;

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// One row of a run's metrics stream. Evaluation fields are empty on rounds
/// without an evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub round: usize,
    pub env_steps: usize,
    pub success_rate: Option<f64>,
    pub mean_return: Option<f64>,
    pub disc_loss: Option<f64>,
    pub reward_mean: Option<f64>,
    pub reg_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub clip_fraction: Option<f64>,
    /// Success fraction of episodes finished during the rollout.
    pub rollout_success: Option<f64>,
    pub rollout_true_return: Option<f64>,
}

/// Append-only line writer; each row goes out in a single write.
pub struct MetricsWriter {
    file: File,
    path: PathBuf,
}

impl MetricsWriter {
    /// Starts a fresh stream, replacing any previous file.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        File::create(path).map_err(|e| Error::io(path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        let mut line = serde_json::to_string(row).expect("metrics row serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub const CHECKPOINT_FORMAT: &str = "fmirl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained model for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub env: String,
    pub env_hash: String,
    pub seed: u64,
    pub round: usize,
    pub env_steps: usize,
    pub config: RunConfig,
    pub norm: NormStats,
    /// Parameter lists keyed by model (`policy`, `flow`, `fp`, `gail`).
    pub params: BTreeMap<String, Vec<ParamRecord>>,
    /// Action standardization of the flow policy baseline.
    pub fp_action_mean: Option<Vec<f64>>,
    pub fp_action_std: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("{}: not a checkpoint", path.display())));
        }
        Ok(ck)
    }

    pub fn params(&self, key: &str) -> Result<&[ParamRecord]> {
        self.params
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("checkpoint has no {key} parameters")))
    }
}
