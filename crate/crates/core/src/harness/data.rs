//! Trajectory files and state normalization.
//!
//! A trajectory file is line-delimited JSON. The first line is a
//! [`TrajectoryHeader`]; every following line is one [`TransitionRecord`].

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::io::write_atomic;
use crate::env::{reset, scripted_expert, EnvSpec, Episode};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::stream;

pub const TRAJECTORY_FORMAT: &str = "fmirl-trajectories";
pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Expert,
    Agent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub format: String,
    pub version: u32,
    pub env: String,
    pub env_hash: String,
    pub generator: Generator,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub episode: usize,
    pub t: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub done: bool,
    pub reward: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub episode: usize,
    pub steps: Vec<TransitionRecord>,
}

impl Trajectory {
    pub fn success(&self) -> bool {
        self.steps.last().is_some_and(|s| s.success)
    }

    pub fn ret(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    fn check(&self) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            if s.t != i || s.episode != self.episode {
                return Err(Error::Data(format!(
                    "episode {} is not contiguous at step {i}",
                    self.episode
                )));
            }
            if s.done != (i + 1 == self.steps.len()) {
                return Err(Error::Data(format!(
                    "episode {} has a misplaced terminal flag at step {i}",
                    self.episode
                )));
            }
        }
        Ok(())
    }
}

/// Expert or agent demonstrations together with their header.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: TrajectoryHeader,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn transitions(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.trajectories.iter().flat_map(|t| t.steps.iter())
    }

    pub fn len(&self) -> usize {
        self.transitions().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps only the first `n` trajectories.
    pub fn truncate(&mut self, n: usize) {
        self.trajectories.truncate(n);
        self.header.episodes = self.trajectories.len();
    }

    pub fn states(&self) -> Tensor {
        stack(self.transitions().map(|r| r.s.as_slice()))
    }

    pub fn actions(&self) -> Tensor {
        stack(self.transitions().map(|r| r.a.as_slice()))
    }

    pub fn check_env(&self, spec: &EnvSpec) -> Result<()> {
        if self.header.env_hash != spec.hash() {
            return Err(Error::Data(format!(
                "dataset was recorded on {} ({}) but the run uses {} ({})",
                self.header.env,
                self.header.env_hash,
                spec.name.as_str(),
                spec.hash()
            )));
        }
        Ok(())
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Tensor {
    let mut data = Vec::new();
    let mut cols = 0;
    let mut n = 0;
    for r in rows {
        cols = r.len();
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::from_raw([n, cols], data)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&data.header).expect("header serializes"));
    out.push('\n');
    for r in data.transitions() {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: missing header", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: TrajectoryHeader = serde_json::from_str(&first)
        .map_err(|e| Error::Data(format!("{}: bad header: {e}", path.display())))?;
    if header.format != TRAJECTORY_FORMAT || header.version != TRAJECTORY_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported format {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let mut trajectories: Vec<Trajectory> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TransitionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), i + 2)))?;
        match trajectories.last_mut() {
            Some(t) if t.episode == rec.episode => t.steps.push(rec),
            _ => trajectories.push(Trajectory {
                episode: rec.episode,
                steps: vec![rec],
            }),
        }
    }
    for t in &trajectories {
        t.check()?;
    }
    if trajectories.len() != header.episodes {
        return Err(Error::Data(format!(
            "{}: header announces {} episodes, found {}",
            path.display(),
            header.episodes,
            trajectories.len()
        )));
    }
    Ok(Dataset { header, trajectories })
}

/// Rolls out the scripted demonstrator for `episodes` episodes.
pub fn generate_expert(spec: &EnvSpec, episodes: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, 0);
    let mut trajectories = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut ep = Episode {
            spec: spec.clone(),
            state: reset(spec, &mut rng),
            t: 0,
        };
        let mut steps = Vec::new();
        loop {
            let s = ep.state.clone();
            let a = spec.clip_action(&scripted_expert(spec, &s));
            let r = ep.step(&a);
            steps.push(TransitionRecord {
                episode,
                t: steps.len(),
                s,
                a,
                s_next: r.next_state,
                done: r.done,
                reward: r.true_reward,
                success: r.success,
            });
            if r.done {
                break;
            }
        }
        trajectories.push(Trajectory { episode, steps });
    }
    Dataset {
        header: TrajectoryHeader {
            format: TRAJECTORY_FORMAT.into(),
            version: TRAJECTORY_VERSION,
            env: spec.name.as_str().into(),
            env_hash: spec.hash(),
            generator: Generator::Expert,
            episodes,
        },
        trajectories,
    }
}

/// Per-dimension state statistics of the expert data, frozen for a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const MIN_STD: f64 = 1e-6;

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn from_states(states: &Tensor) -> Result<Self> {
        let n = states.rows();
        if n == 0 {
            return Err(Error::Data("cannot normalize with an empty dataset".into()));
        }
        let d = states.cols();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(states.row_slice(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                var[j] += (states.get(i, j) - mean[j]).powi(2);
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(MIN_STD)).collect();
        Ok(NormStats { mean, std })
    }

    pub fn normalize(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, sd))| (v - m) / sd)
            .collect()
    }

    pub fn denormalize(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, sd))| v * sd + m)
            .collect()
    }

    pub fn normalize_rows(&self, states: &Tensor) -> Tensor {
        let mut out = Vec::with_capacity(states.len());
        for i in 0..states.rows() {
            out.extend(self.normalize(states.row_slice(i)));
        }
        Tensor::from_raw(states.shape(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_is_clamped() {
        let s = Tensor::from_rows(&[[1.0, 2.0], [1.0, 4.0]]).unwrap();
        let n = NormStats::from_states(&s).unwrap();
        assert_eq!(n.std[0], MIN_STD);
        assert_eq!(n.std[1], 1.0);
        assert_eq!(n.normalize(&[1.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn expert_dataset_flags() {
        let d = generate_expert(&EnvSpec::point_goal(), 5, 1);
        assert_eq!(d.trajectories.len(), 5);
        for t in &d.trajectories {
            t.check().unwrap();
            assert!(t.success());
        }
    }

    #[test]
    fn misplaced_done_rejected() {
        let mut d = generate_expert(&EnvSpec::point_goal(), 1, 1);
        d.trajectories[0].steps[0].done = true;
        assert!(matches!(d.trajectories[0].check(), Err(Error::Data(_))));
    }
}
