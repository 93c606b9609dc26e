//! Experiment orchestration behind the `gen-expert`, `train`, `eval` and
//! `export` commands.

pub mod config;
pub mod data;
pub mod eval;
pub mod export;
pub mod io;
pub mod train;

pub use config::{Method, RunConfig};
pub use data::{generate_expert, read_dataset, write_dataset, Dataset, NormStats, Trajectory, TransitionRecord};
pub use eval::{cmd_eval, evaluate, find_checkpoints, EvalSummary, EvalTable};
pub use export::{cmd_export, ExportSummary};
pub use io::{Checkpoint, MetricsRow};
pub use train::{cmd_train, load_expert, run_dir, train_seed, Collector, RunSummary};

use crate::error::Result;
use std::path::Path;

/// What `gen-expert` reports.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertSummary {
    pub episodes: usize,
    pub transitions: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Writes `cfg.expert_episodes` scripted episodes to `out`.
pub fn cmd_gen_expert(cfg: &RunConfig, seed: u64, out: &Path) -> Result<ExpertSummary> {
    let spec = cfg.env_spec();
    spec.validate()?;
    let data = generate_expert(&spec, cfg.expert_episodes, seed);
    write_dataset(out, &data)?;
    let n = data.trajectories.len();
    let denom = n.max(1) as f64;
    Ok(ExpertSummary {
        episodes: n,
        transitions: data.len(),
        success_rate: data.trajectories.iter().filter(|t| t.success()).count() as f64 / denom,
        mean_return: data.trajectories.iter().map(|t| t.ret()).sum::<f64>() / denom,
    })
}
