//! Run configuration, read from TOML. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::agent::PolicyObjectiveConfig;
use crate::baselines::{FlowPolicyConfig, GailConfig};
use crate::disc::DiscConfig;
use crate::env::{EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::flow::FlowConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fmirl,
    FpBc,
    Gail,
    PpoTrueReward,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fmirl => "fmirl",
            Method::FpBc => "fp_bc",
            Method::Gail => "gail",
            Method::PpoTrueReward => "ppo_true_reward",
        }
    }

    pub fn needs_expert(self) -> bool {
        self != Method::PpoTrueReward
    }

    pub fn is_online(self) -> bool {
        self != Method::FpBc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub env: EnvKind,
    /// One independent run per seed.
    pub seeds: Vec<u64>,
    /// Step budget; training runs as many whole rounds as fit (at least one).
    pub total_env_steps: usize,
    /// Parallel environment instances during rollouts.
    pub num_envs: usize,
    /// Steps per environment per round.
    pub rollout_horizon: usize,
    pub eval_episodes: usize,
    /// Evaluate every this many rounds (and always after the last one).
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub expert_dataset: Option<PathBuf>,
    /// Use only the first this many expert trajectories.
    pub expert_trajectories: Option<usize>,
    /// Episodes written by `gen-expert`.
    pub expert_episodes: usize,
    pub out_dir: PathBuf,
    pub state_norm: bool,
    /// Update the discriminator before the policy within each round.
    pub disc_first: bool,
    /// Rounds between reward refreshes.
    pub reward_update_freq: usize,
    /// Flow-matching warm start of the teacher on expert pairs.
    pub fm_pretrain_steps: usize,
    pub fm_pretrain_lr: f64,
    pub flow: FlowConfig,
    pub disc: DiscConfig,
    pub policy: PolicyObjectiveConfig,
    pub fp: FlowPolicyConfig,
    pub gail: GailConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Fmirl,
            env: EnvKind::PointGoal,
            seeds: vec![0],
            total_env_steps: 300_000,
            num_envs: 8,
            rollout_horizon: 256,
            eval_episodes: 100,
            eval_every: 10,
            checkpoint_every: 50,
            expert_dataset: None,
            expert_trajectories: None,
            expert_episodes: 20,
            out_dir: PathBuf::from("runs"),
            state_norm: true,
            disc_first: false,
            reward_update_freq: 1,
            fm_pretrain_steps: 0,
            fm_pretrain_lr: 1e-3,
            flow: FlowConfig::default(),
            disc: DiscConfig::default(),
            policy: PolicyObjectiveConfig::default(),
            fp: FlowPolicyConfig::default(),
            gail: GailConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        cfg.out_dir = resolve(&cfg.out_dir);
        cfg.expert_dataset = cfg.expert_dataset.as_deref().map(resolve);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::new(self.env)
    }

    /// Flow config with the joint dimension filled in from the environment.
    pub fn flow_config(&self) -> FlowConfig {
        let spec = self.env_spec();
        FlowConfig {
            joint_dim: spec.state_dim + spec.action_dim,
            ..self.flow.clone()
        }
    }

    pub fn steps_per_round(&self) -> usize {
        self.num_envs * self.rollout_horizon
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.num_envs == 0 || self.rollout_horizon == 0 {
            return Err(Error::Config("num_envs and rollout_horizon must be positive".into()));
        }
        if self.eval_every == 0 || self.checkpoint_every == 0 || self.reward_update_freq == 0 {
            return Err(Error::Config(
                "eval_every, checkpoint_every and reward_update_freq must be positive".into(),
            ));
        }
        if self.flow.joint_dim != 0 && self.flow.joint_dim != self.flow_config().joint_dim {
            return Err(Error::Config(format!(
                "flow.joint_dim {} does not match the environment",
                self.flow.joint_dim
            )));
        }
        self.flow_config().validate()?;
        self.disc.validate()?;
        self.policy.validate()?;
        self.fp.validate()?;
        Ok(())
    }

    /// Checks that every path the run will read exists.
    pub fn check_paths(&self) -> Result<()> {
        if self.method.needs_expert() {
            match &self.expert_dataset {
                None => return Err(Error::Config(format!("method {} needs expert_dataset", self.method.as_str()))),
                Some(p) if !p.is_file() => {
                    return Err(Error::Config(format!("expert dataset {} not found", p.display())))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_table() {
        let c = RunConfig::default();
        assert_eq!(c.disc.lr, 1e-4);
        assert_eq!(c.reward_update_freq, 1);
        assert_eq!(c.disc.update_epochs, 1);
        assert!(c.state_norm);
        assert_eq!(c.policy.beta, 2.0);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let e = RunConfig::from_toml_str("method = \"gail\"\nbetta = 3\n").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("betta")));
        let e = RunConfig::from_toml_str("[disc]\ntemprature = 1.0\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.method = Method::PpoTrueReward;
        c.seeds = vec![3, 4];
        c.policy.beta = 0.5;
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_seed_list_rejected() {
        assert!(RunConfig::from_toml_str("seeds = []\n").is_err());
    }
}
