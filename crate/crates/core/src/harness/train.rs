//! Training runs for every method.
//!
//! Online methods share one round structure: roll out the student, score the
//! rollout (flow discriminator, MLP discriminator or true reward), update the
//! policy, then update the reward model. `disc_first` moves the reward-model
//! update ahead of the scoring.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{Method, RunConfig};
use super::data::{read_dataset, Dataset, NormStats};
use super::eval::{evaluate, EvalSummary};
use super::io::{write_atomic, Checkpoint, MetricsRow, MetricsWriter, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
use crate::agent::{policy_update, regularization_batch, ActOutput, RolloutBuffer, StudentPolicy};
use crate::baselines::{train_fp_bc, ConditionalFlowPolicy, MlpDiscriminator};
use crate::disc::FmDiscriminator;
use crate::env::{EnvSpec, Episode};
use crate::error::{Error, Result};
use crate::flow::{train_cfm, Condition, VectorFieldNet};
use crate::nn::{Adam, AdamConfig, Tensor};
use crate::rng::{stream, RunRng};

pub(crate) const STREAM_POLICY_INIT: u64 = 1;
pub(crate) const STREAM_MODEL_INIT: u64 = 2;
pub(crate) const STREAM_ACT: u64 = 3;
pub(crate) const STREAM_UPDATE: u64 = 4;
pub(crate) const STREAM_REWARD: u64 = 5;
pub(crate) const STREAM_DISC: u64 = 6;
pub(crate) const STREAM_REG: u64 = 7;
pub(crate) const STREAM_FP: u64 = 9;
const STREAM_ENV_BASE: u64 = 1000;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";

/// Outcome of one seed's run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub dir: PathBuf,
    pub rounds: usize,
    pub env_steps: usize,
    pub final_eval: EvalSummary,
}

pub fn run_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("seed_{seed}"))
}

/// Trains one run per configured seed.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    cfg.check_paths()?;
    cfg.seeds.iter().map(|&s| train_seed(cfg, s)).collect()
}

/// Loads the expert dataset named in the config, checked against the
/// environment and truncated to `expert_trajectories`.
pub fn load_expert(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .expert_dataset
        .as_deref()
        .ok_or_else(|| Error::Config("expert_dataset is not set".into()))?;
    let mut data = read_dataset(path)?;
    data.check_env(&cfg.env_spec())?;
    if let Some(n) = cfg.expert_trajectories {
        data.truncate(n);
    }
    if data.is_empty() {
        return Err(Error::Data(format!("expert dataset {} has no transitions", path.display())));
    }
    Ok(data)
}

/// `[normalized state, action]` rows.
pub fn joint_rows(norm: &NormStats, states: &Tensor, actions: &Tensor) -> Tensor {
    let s = norm.normalize_rows(states);
    Tensor::hcat(&[&s, actions]).expect("row counts agree")
}

/// Statistics of the environment interaction inside one rollout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutInfo {
    pub true_rewards: Vec<f64>,
    pub episodes: usize,
    pub successes: usize,
    pub true_return_sum: f64,
}

struct PendingStep {
    state: Vec<f64>,
    act: ActOutput,
    true_reward: f64,
    terminal: bool,
    done: bool,
    next_state: Vec<f64>,
}

/// Parallel environment instances, each with its own random stream, that
/// persist across rounds.
pub struct Collector {
    spec: EnvSpec,
    norm: NormStats,
    envs: Vec<Episode>,
    rngs: Vec<RunRng>,
    returns: Vec<f64>,
}

impl Collector {
    pub fn new(spec: &EnvSpec, norm: &NormStats, count: usize, seed: u64) -> Self {
        let mut rngs: Vec<RunRng> = (0..count as u64).map(|i| stream(seed, STREAM_ENV_BASE + i)).collect();
        let envs = rngs.iter_mut().map(|r| Episode::start(spec, r)).collect();
        Collector {
            spec: spec.clone(),
            norm: norm.clone(),
            envs,
            rngs,
            returns: vec![0.0; count],
        }
    }

    /// `horizon` steps in every environment. The buffer holds each
    /// environment's steps contiguously; the last step of each segment is
    /// a cut. Success is terminal (zero bootstrap), horizon truncation
    /// bootstraps from the value of the final state.
    pub fn collect(
        &mut self,
        policy: &StudentPolicy,
        horizon: usize,
        rng: &mut RunRng,
    ) -> Result<(RolloutBuffer, RolloutInfo)> {
        let n = self.envs.len();
        let sd = self.spec.state_dim;
        let mut per_env: Vec<Vec<PendingStep>> = (0..n).map(|_| Vec::with_capacity(horizon)).collect();
        let mut info = RolloutInfo::default();
        for _ in 0..horizon {
            let mut states = Vec::with_capacity(n * sd);
            for e in &self.envs {
                states.extend(self.norm.normalize(&e.state));
            }
            let states = Tensor::from_raw([n, sd], states);
            let acts = policy.act_batch(&states, rng)?;
            for (i, act) in acts.into_iter().enumerate() {
                let res = self.envs[i].step(&act.action);
                self.returns[i] += res.true_reward;
                per_env[i].push(PendingStep {
                    state: states.row_slice(i).to_vec(),
                    act,
                    true_reward: res.true_reward,
                    terminal: res.success,
                    done: res.done,
                    next_state: self.norm.normalize(&res.next_state),
                });
                if res.done {
                    info.episodes += 1;
                    info.successes += res.success as usize;
                    info.true_return_sum += self.returns[i];
                    self.returns[i] = 0.0;
                    self.envs[i] = Episode::start(&self.spec, &mut self.rngs[i]);
                }
            }
        }
        let next: Vec<f64> = per_env.iter().flatten().flat_map(|p| p.next_state.iter().copied()).collect();
        let next_values = policy.values(&Tensor::from_raw([n * horizon, sd], next))?;
        let mut buf = RolloutBuffer::new(sd, self.spec.action_dim);
        for (k, p) in per_env.iter().flatten().enumerate() {
            let last = k % horizon == horizon - 1;
            let nv = if p.terminal { 0.0 } else { next_values[k] };
            buf.push(&p.state, &p.act, p.true_reward, nv, p.done || last);
            info.true_rewards.push(p.true_reward);
        }
        Ok((buf, info))
    }
}

/// Reward model of an online run.
enum Scorer {
    Flow(FmDiscriminator),
    Mlp(MlpDiscriminator),
    TrueReward,
}

/// The network the regularizer samples from. It is the discriminator's own
/// network, not a copy.
fn teacher(disc: &FmDiscriminator) -> &VectorFieldNet {
    disc.net()
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    round: usize,
    env_steps: usize,
    error: String,
    batch_rows: usize,
    batch_head: Vec<Vec<f64>>,
    reward_head: &'a [f64],
}

fn write_diagnostic(dir: &Path, round: usize, env_steps: usize, err: &Error, batch: Option<&Tensor>, rewards: &[f64]) {
    let head = batch
        .map(|b| (0..b.rows().min(16)).map(|i| b.row_slice(i).to_vec()).collect())
        .unwrap_or_default();
    let d = Diagnostic {
        round,
        env_steps,
        error: err.to_string(),
        batch_rows: batch.map_or(0, |b| b.rows()),
        batch_head: head,
        reward_head: &rewards[..rewards.len().min(16)],
    };
    let text = serde_json::to_string_pretty(&d).expect("diagnostic serializes");
    if let Err(e) = write_atomic(&dir.join(DIAGNOSTIC_FILE), text.as_bytes()) {
        log::error!("could not write diagnostic snapshot: {e}");
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Trains a single seed and writes its metrics and checkpoint.
pub fn train_seed(cfg: &RunConfig, seed: u64) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = run_dir(cfg, seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let spec = cfg.env_spec();
    let expert = if cfg.method.needs_expert() { Some(load_expert(cfg)?) } else { None };
    let norm = match (&expert, cfg.state_norm) {
        (Some(d), true) => NormStats::from_states(&d.states())?,
        _ => NormStats::identity(spec.state_dim),
    };
    if cfg.method == Method::FpBc {
        return train_fp_seed(cfg, seed, &dir, &spec, &norm, expert.as_ref().unwrap());
    }
    OnlineRun::new(cfg, seed, dir, spec, norm, expert.as_ref())?.run()
}

fn train_fp_seed(
    cfg: &RunConfig,
    seed: u64,
    dir: &Path,
    spec: &EnvSpec,
    norm: &NormStats,
    expert: &Dataset,
) -> Result<RunSummary> {
    let mut rng = stream(seed, STREAM_FP);
    let states = norm.normalize_rows(&expert.states());
    let (fp, losses) = train_fp_bc(&states, &expert.actions(), &spec.action_low, &spec.action_high, &cfg.fp, &mut rng)?;
    // Offline: no environment interaction is available to this branch.
    let env_steps = 0;
    let eval = eval_fp(&fp, norm, spec, cfg.eval_episodes, seed)?;
    let mut metrics = MetricsWriter::create(&dir.join(METRICS_FILE))?;
    metrics.append(&MetricsRow {
        method: cfg.method.as_str().into(),
        seed,
        round: 0,
        env_steps,
        success_rate: Some(eval.success_rate),
        mean_return: Some(eval.mean_return),
        policy_loss: losses.last().copied(),
        ..Default::default()
    })?;
    let mut params = BTreeMap::new();
    params.insert("fp".to_string(), fp.store().to_records());
    checkpoint(cfg, seed, 0, env_steps, norm, spec, params, Some(&fp)).save(&dir.join(CHECKPOINT_FILE))?;
    Ok(RunSummary {
        method: cfg.method,
        seed,
        dir: dir.to_path_buf(),
        rounds: 0,
        env_steps,
        final_eval: eval,
    })
}

#[allow(clippy::too_many_arguments)]
fn checkpoint(
    cfg: &RunConfig,
    seed: u64,
    round: usize,
    env_steps: usize,
    norm: &NormStats,
    spec: &EnvSpec,
    params: BTreeMap<String, Vec<crate::nn::ParamRecord>>,
    fp: Option<&ConditionalFlowPolicy>,
) -> Checkpoint {
    Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        method: cfg.method,
        env: spec.name.as_str().into(),
        env_hash: spec.hash(),
        seed,
        round,
        env_steps,
        config: cfg.clone(),
        norm: norm.clone(),
        params,
        fp_action_mean: fp.map(|f| f.action_mean.clone()),
        fp_action_std: fp.map(|f| f.action_std.clone()),
    }
}

pub(crate) fn eval_student(
    policy: &StudentPolicy,
    norm: &NormStats,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    evaluate(spec, episodes, seed, |raw| {
        let states = norm.normalize_rows(raw);
        let means = policy.means(&states)?;
        let mut out = Vec::with_capacity(means.len());
        for i in 0..means.rows() {
            out.extend(policy.squash(means.row_slice(i)));
        }
        Tensor::new([raw.rows(), spec.action_dim], out)
    })
}

pub(crate) fn eval_fp(
    fp: &ConditionalFlowPolicy,
    norm: &NormStats,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let mut rng = stream(seed, STREAM_FP + 100);
    evaluate(spec, episodes, seed, |raw| fp.act_batch(&norm.normalize_rows(raw), &mut rng))
}

struct OnlineRun<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    dir: PathBuf,
    spec: EnvSpec,
    norm: NormStats,
    expert_joint: Option<Tensor>,
    policy: StudentPolicy,
    adam: Adam,
    scorer: Scorer,
    collector: Collector,
    act_rng: RunRng,
    update_rng: RunRng,
    reward_rng: RunRng,
    disc_rng: RunRng,
    reg_rng: RunRng,
    env_steps: usize,
    last_batch: Option<Tensor>,
    last_rewards: Vec<f64>,
}

impl<'a> OnlineRun<'a> {
    fn new(
        cfg: &'a RunConfig,
        seed: u64,
        dir: PathBuf,
        spec: EnvSpec,
        norm: NormStats,
        expert: Option<&Dataset>,
    ) -> Result<Self> {
        let expert_joint = expert.map(|d| joint_rows(&norm, &d.states(), &d.actions()));
        let policy = StudentPolicy::new(
            spec.state_dim,
            &spec.action_low,
            &spec.action_high,
            &cfg.policy,
            &mut stream(seed, STREAM_POLICY_INIT),
        )?;
        let adam = policy.optimizer(&cfg.policy);
        let mut init = stream(seed, STREAM_MODEL_INIT);
        let scorer = match cfg.method {
            Method::Fmirl => {
                let mut disc = FmDiscriminator::new(&cfg.flow_config(), &cfg.disc, &mut init)?;
                if !std::ptr::eq(teacher(&disc), disc.net()) {
                    return Err(Error::Usage("regularizer and discriminator must share one flow model".into()));
                }
                if cfg.fm_pretrain_steps > 0 {
                    let joint = expert_joint.as_ref().unwrap();
                    let mut adam = Adam::new(disc.net().store(), AdamConfig::with_lr(cfg.fm_pretrain_lr));
                    train_cfm(
                        disc.net_mut(),
                        &mut adam,
                        joint,
                        Condition::Expert,
                        cfg.fm_pretrain_steps,
                        cfg.disc.batch_size,
                        &mut init,
                    )?;
                }
                Scorer::Flow(disc)
            }
            Method::Gail => Scorer::Mlp(MlpDiscriminator::new(spec.state_dim + spec.action_dim, &cfg.gail, &mut init)?),
            Method::PpoTrueReward => Scorer::TrueReward,
            Method::FpBc => unreachable!("offline method"),
        };
        let collector = Collector::new(&spec, &norm, cfg.num_envs, seed);
        Ok(OnlineRun {
            cfg,
            seed,
            dir,
            spec,
            norm,
            expert_joint,
            policy,
            adam,
            scorer,
            collector,
            act_rng: stream(seed, STREAM_ACT),
            update_rng: stream(seed, STREAM_UPDATE),
            reward_rng: stream(seed, STREAM_REWARD),
            disc_rng: stream(seed, STREAM_DISC),
            reg_rng: stream(seed, STREAM_REG),
            env_steps: 0,
            last_batch: None,
            last_rewards: Vec::new(),
        })
    }

    /// Whole rounds that fit in the step budget (at least one).
    fn rounds(&self) -> usize {
        (self.cfg.total_env_steps / self.cfg.steps_per_round()).max(1)
    }

    fn run(mut self) -> Result<RunSummary> {
        let mut metrics = MetricsWriter::create(&self.dir.join(METRICS_FILE))?;
        let rounds = self.rounds();
        let mut final_eval = None;
        for round in 0..rounds {
            let row = match self.round(round) {
                Ok(r) => r,
                Err(e) => {
                    if matches!(e, Error::Numerical(_)) {
                        write_diagnostic(&self.dir, round, self.env_steps, &e, self.last_batch.as_ref(), &self.last_rewards);
                    }
                    return Err(e);
                }
            };
            let mut row = row;
            if (round + 1) % self.cfg.eval_every == 0 || round + 1 == rounds {
                let ev = eval_student(&self.policy, &self.norm, &self.spec, self.cfg.eval_episodes, self.seed)?;
                row.success_rate = Some(ev.success_rate);
                row.mean_return = Some(ev.mean_return);
                final_eval = Some(ev);
            }
            metrics.append(&row)?;
            if (round + 1) % self.cfg.checkpoint_every == 0 || round + 1 == rounds {
                self.checkpoint(round).save(&self.dir.join(CHECKPOINT_FILE))?;
            }
        }
        let final_eval = match final_eval {
            Some(e) => e,
            None => eval_student(&self.policy, &self.norm, &self.spec, self.cfg.eval_episodes, self.seed)?,
        };
        Ok(RunSummary {
            method: self.cfg.method,
            seed: self.seed,
            dir: self.dir,
            rounds,
            env_steps: self.env_steps,
            final_eval,
        })
    }

    fn update_reward_model(&mut self, agent: &Tensor) -> Result<Option<f64>> {
        let expert = match &self.expert_joint {
            Some(e) => e,
            None => return Ok(None),
        };
        let rng = &mut self.disc_rng;
        let mut losses = Vec::new();
        match &mut self.scorer {
            Scorer::Flow(d) => {
                for _ in 0..self.cfg.disc.update_epochs {
                    losses.push(d.train_epoch(expert, agent, rng)?);
                }
            }
            Scorer::Mlp(d) => {
                for _ in 0..self.cfg.gail.update_epochs {
                    // Reported as a loss (negated objective) like the flow model.
                    losses.push(-d.train_epoch(expert, agent, rng)?);
                }
            }
            Scorer::TrueReward => return Ok(None),
        }
        Ok(Some(mean(&losses)))
    }

    fn round(&mut self, round: usize) -> Result<MetricsRow> {
        let (mut buf, info) = self.collector.collect(&self.policy, self.cfg.rollout_horizon, &mut self.act_rng)?;
        self.env_steps += buf.len();
        let joint = buf.joint_tensor();
        self.last_batch = Some(joint.clone());
        let refresh = round % self.cfg.reward_update_freq == 0;
        let mut disc_loss = None;
        if self.cfg.disc_first && refresh {
            disc_loss = self.update_reward_model(&joint)?;
        }
        let rewards = match &self.scorer {
            Scorer::Flow(d) => d.reward(&joint, &mut self.reward_rng)?,
            Scorer::Mlp(d) => d.reward(&joint)?,
            Scorer::TrueReward => info.true_rewards.clone(),
        };
        self.last_rewards = rewards.clone();
        buf.rewards = rewards;
        buf.finish(self.cfg.policy.gamma, self.cfg.policy.lambda);

        let reg = match &self.scorer {
            Scorer::Flow(d) if self.cfg.policy.beta > 0.0 => Some(regularization_batch(
                teacher(d),
                self.cfg.policy.reg_batch_size,
                self.spec.state_dim,
                &self.spec.action_low,
                &self.spec.action_high,
                &d.net().config().clone(),
                &mut self.reg_rng,
            )?),
            _ => None,
        };
        let stats = policy_update(&mut self.policy, &mut self.adam, &buf, reg.as_ref(), &self.cfg.policy, &mut self.update_rng)?;
        if !self.cfg.disc_first && refresh {
            disc_loss = self.update_reward_model(&joint)?;
        }
        Ok(MetricsRow {
            method: self.cfg.method.as_str().into(),
            seed: self.seed,
            round,
            env_steps: self.env_steps,
            success_rate: None,
            mean_return: None,
            disc_loss,
            reward_mean: Some(mean(&buf.rewards)),
            reg_loss: reg.as_ref().map(|_| stats.reg_loss),
            policy_loss: Some(stats.policy_loss),
            value_loss: Some(stats.value_loss),
            entropy: Some(stats.entropy),
            clip_fraction: Some(stats.clip_fraction),
            rollout_success: (info.episodes > 0).then(|| info.successes as f64 / info.episodes as f64),
            rollout_true_return: (info.episodes > 0).then(|| info.true_return_sum / info.episodes as f64),
        })
    }

    fn checkpoint(&self, round: usize) -> Checkpoint {
        let mut params = BTreeMap::new();
        params.insert("policy".to_string(), self.policy.store().to_records());
        match &self.scorer {
            Scorer::Flow(d) => {
                params.insert("flow".to_string(), d.net().store().to_records());
            }
            Scorer::Mlp(d) => {
                params.insert("gail".to_string(), d.store().to_records());
            }
            Scorer::TrueReward => {}
        }
        checkpoint(self.cfg, self.seed, round, self.env_steps, &self.norm, &self.spec, params, None)
    }
}

/// Rebuilds the student policy stored in a checkpoint.
pub fn load_student(ck: &Checkpoint) -> Result<StudentPolicy> {
    let spec = EnvSpec::new(ck.config.env);
    let mut p = StudentPolicy::new(
        spec.state_dim,
        &spec.action_low,
        &spec.action_high,
        &ck.config.policy,
        &mut stream(0, 0),
    )?;
    p.store_mut().load_records(ck.params("policy")?)?;
    Ok(p)
}

pub fn load_fp(ck: &Checkpoint) -> Result<ConditionalFlowPolicy> {
    let spec = EnvSpec::new(ck.config.env);
    let mut fp = ConditionalFlowPolicy::new(spec.state_dim, &spec.action_low, &spec.action_high, &ck.config.fp, &mut stream(0, 0))?;
    fp.store_mut().load_records(ck.params("fp")?)?;
    fp.action_mean = ck.fp_action_mean.clone().ok_or_else(|| Error::Data("checkpoint lacks action statistics".into()))?;
    fp.action_std = ck.fp_action_std.clone().ok_or_else(|| Error::Data("checkpoint lacks action statistics".into()))?;
    Ok(fp)
}

pub fn load_flow(ck: &Checkpoint) -> Result<VectorFieldNet> {
    let mut net = VectorFieldNet::new(&ck.config.flow_config(), &mut stream(0, 0))?;
    net.store_mut().load_records(ck.params("flow")?)?;
    Ok(net)
}
