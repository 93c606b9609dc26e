//! Evaluation episodes and the noise sweep.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::config::{Method, RunConfig};
use super::io::{write_atomic, Checkpoint};
use super::train::{eval_fp, eval_student, load_fp, load_student, CHECKPOINT_FILE};
use crate::env::{EnvSpec, Episode};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::stream;

const STREAM_EVAL: u64 = 8;

pub const EVAL_FILE: &str = "eval.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Runs `episodes` episodes in lockstep. `act` maps a batch of raw states to
/// actions. Reset draws come from a stream fixed by `seed`, so every method
/// evaluated with the same seed faces the same start and goal positions.
pub fn evaluate(
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    mut act: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<EvalSummary> {
    let mut rng = stream(seed, STREAM_EVAL);
    let mut eps: Vec<Episode> = (0..episodes).map(|_| Episode::start(spec, &mut rng)).collect();
    let mut active: Vec<usize> = (0..episodes).collect();
    let mut returns = vec![0.0; episodes];
    let mut successes = 0usize;
    while !active.is_empty() {
        let rows: Vec<&[f64]> = active.iter().map(|&i| eps[i].state.as_slice()).collect();
        let states = Tensor::from_rows(&rows)?;
        let actions = act(&states)?;
        let mut still = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            let r = eps[i].step(actions.row_slice(k));
            returns[i] += r.true_reward;
            if r.done {
                successes += r.success as usize;
            } else {
                still.push(i);
            }
        }
        active = still;
    }
    let n = episodes.max(1) as f64;
    Ok(EvalSummary {
        episodes,
        success_rate: successes as f64 / n,
        mean_return: returns.iter().sum::<f64>() / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: Method,
    pub seed: u64,
    pub noise_mult: f64,
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub noise_mult: f64,
    pub success_mean: f64,
    pub success_std: f64,
    pub return_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub env: String,
    pub rows: Vec<EvalRow>,
    pub summary: Vec<NoiseSummary>,
}

impl EvalTable {
    pub fn success_at(&self, noise: f64) -> Option<f64> {
        self.summary.iter().find(|s| s.noise_mult == noise).map(|s| s.success_mean)
    }
}

/// A checkpoint file, or a run directory holding `seed_*/checkpoint.json`.
pub fn find_checkpoints(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join(CHECKPOINT_FILE))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Error::Usage(format!("no checkpoints under {}", path.display())));
    }
    Ok(found)
}

/// Evaluates each checkpoint at each noise multiplier on the configured
/// environment, and writes the table to `out` when given.
pub fn cmd_eval(cfg: &RunConfig, checkpoints: &[PathBuf], noise_mults: &[f64], out: Option<&Path>) -> Result<EvalTable> {
    if noise_mults.is_empty() {
        return Err(Error::Usage("no noise multipliers given".into()));
    }
    if checkpoints.is_empty() {
        return Err(Error::Usage("no checkpoints given".into()));
    }
    let base = cfg.env_spec();
    for &m in noise_mults {
        base.clone().with_noise(m).validate()?;
    }
    let mut rows = Vec::new();
    for path in checkpoints {
        let ck = Checkpoint::load(path)?;
        if ck.env_hash != base.hash() {
            return Err(Error::Config(format!(
                "checkpoint {} was trained on {} but the config names {}",
                path.display(),
                ck.env,
                base.name.as_str()
            )));
        }
        let student = if ck.method == Method::FpBc { None } else { Some(load_student(&ck)?) };
        let fp = if ck.method == Method::FpBc { Some(load_fp(&ck)?) } else { None };
        for &m in noise_mults {
            let spec = base.clone().with_noise(m);
            let ev = match (&student, &fp) {
                (Some(p), _) => eval_student(p, &ck.norm, &spec, cfg.eval_episodes, ck.seed)?,
                (None, Some(f)) => eval_fp(f, &ck.norm, &spec, cfg.eval_episodes, ck.seed)?,
                _ => unreachable!(),
            };
            rows.push(EvalRow {
                method: ck.method,
                seed: ck.seed,
                noise_mult: m,
                success_rate: ev.success_rate,
                mean_return: ev.mean_return,
            });
        }
    }
    let summary = noise_mults
        .iter()
        .map(|&m| {
            let at: Vec<&EvalRow> = rows.iter().filter(|r| r.noise_mult == m).collect();
            let n = at.len() as f64;
            let mean = at.iter().map(|r| r.success_rate).sum::<f64>() / n;
            let var = at.iter().map(|r| (r.success_rate - mean).powi(2)).sum::<f64>() / n;
            NoiseSummary {
                noise_mult: m,
                success_mean: mean,
                success_std: var.sqrt(),
                return_mean: at.iter().map(|r| r.mean_return).sum::<f64>() / n,
            }
        })
        .collect();
    let table = EvalTable {
        env: base.name.as_str().into(),
        rows,
        summary,
    };
    if let Some(out) = out {
        let text = serde_json::to_string_pretty(&table).expect("table serializes");
        write_atomic(out, text.as_bytes())?;
    }
    Ok(table)
}
