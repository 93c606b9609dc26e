//! Student policy and its clipped policy-gradient update.
//!
//! The policy is a Gaussian over pre-squash actions `u`, with a
//! state-independent log standard deviation; actions are
//! `a = mid + half * tanh(u)` inside the environment bounds. The update adds
//! a distillation penalty `beta * mean ||mu(s_G) - a_G||^2` on pairs produced
//! by the teacher flow model, where `mu` is the squashed policy mean.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::flow::{euler_generate, Condition, FlowConfig, VelocityField};
use crate::nn::{softplus, Activation, Adam, AdamConfig, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::gaussian_vec;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Mean-ratio band outside which the remaining epochs are skipped.
const RATIO_GUARD: (f64, f64) = (0.5, 2.0);
const REG_RETRIES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyObjectiveConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Weight of the distillation penalty.
    pub beta: f64,
    /// Generated pairs per update.
    pub reg_batch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub init_log_std: f64,
}

impl Default for PolicyObjectiveConfig {
    fn default() -> Self {
        PolicyObjectiveConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 10,
            minibatch_size: 256,
            beta: 2.0,
            reg_batch_size: 256,
            entropy_coef: 0.0,
            value_coef: 0.5,
            lr: 3e-4,
            max_grad_norm: 0.5,
            hidden_layers: 2,
            hidden_units: 64,
            init_log_std: -0.5,
        }
    }
}

impl PolicyObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.epochs == 0 || self.minibatch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("epochs, minibatch_size and lr must be positive".into()));
        }
        if self.hidden_layers == 0 || self.hidden_units == 0 {
            return Err(Error::Config("policy network needs a hidden layer".into()));
        }
        Ok(())
    }
}

/// Sampled action with the quantities the update needs later.
#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    pub action: Vec<f64>,
    /// Pre-squash Gaussian sample.
    pub raw: Vec<f64>,
    /// Log density of `action`, including the squashing correction.
    pub logp: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct StudentPolicy {
    store: ParamStore,
    mean_net: Mlp,
    value_net: Mlp,
    log_std: ParamId,
    mid: Vec<f64>,
    half: Vec<f64>,
}

/// `ln(1 - tanh(u)^2)` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

impl StudentPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        low: &[f64],
        high: &[f64],
        cfg: &PolicyObjectiveConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() || low.iter().zip(high).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("policy action bounds must satisfy low < high".into()));
        }
        let action_dim = low.len();
        let mut store = ParamStore::new();
        let mut sizes = vec![state_dim];
        sizes.extend(std::iter::repeat(cfg.hidden_units).take(cfg.hidden_layers));
        let mut mean_sizes = sizes.clone();
        mean_sizes.push(action_dim);
        let mut value_sizes = sizes;
        value_sizes.push(1);
        let mean_net = Mlp::new(&mut store, "policy.mean", &mean_sizes, Activation::Tanh, 0.01, rng)?;
        let value_net = Mlp::new(&mut store, "policy.value", &value_sizes, Activation::Tanh, 1.0, rng)?;
        let init = cfg.init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let log_std = store.add("policy.log_std", Tensor::filled([1, action_dim], init))?;
        Ok(StudentPolicy {
            store,
            mean_net,
            value_net,
            log_std,
            mid: low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            half: low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mid.len()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn log_std(&self) -> &[f64] {
        self.store.value(self.log_std).data()
    }

    pub fn set_log_std(&mut self, values: &[f64]) {
        let slot = self.store.value_mut(self.log_std).data_mut();
        for (s, v) in slot.iter_mut().zip(values) {
            *s = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn squash(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mid.iter().zip(&self.half))
            .map(|(u, (m, h))| m + h * u.tanh())
            .collect()
    }

    /// Log density of the squashed action whose pre-squash value is `raw`,
    /// given the Gaussian mean `mean`.
    pub fn log_prob(&self, mean: &[f64], raw: &[f64]) -> f64 {
        let ls = self.log_std();
        let mut lp = 0.0;
        for j in 0..raw.len() {
            let z = (raw[j] - mean[j]) * (-ls[j]).exp();
            lp += -0.5 * z * z - ls[j] - 0.5 * (2.0 * PI).ln();
            lp -= self.half[j].ln() + log_one_minus_tanh_sq(raw[j]);
        }
        lp
    }

    /// Gaussian means (pre-squash) for a batch of normalized states.
    pub fn means(&self, states: &Tensor) -> Result<Tensor> {
        self.mean_net.infer(&self.store, states)
    }

    pub fn values(&self, states: &Tensor) -> Result<Vec<f64>> {
        Ok(self.value_net.infer(&self.store, states)?.into_data())
    }

    /// Deterministic action: the squashed mean.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let m = self.means(&Tensor::row(state))?;
        Ok(self.squash(m.data()))
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<ActOutput> {
        let states = Tensor::new([1, state.len()], state.to_vec())?;
        Ok(self.act_batch(&states, rng)?.pop().unwrap())
    }

    /// Samples one action per row of `states`.
    pub fn act_batch<R: Rng + ?Sized>(&self, states: &Tensor, rng: &mut R) -> Result<Vec<ActOutput>> {
        let means = self.means(states)?;
        let values = self.values(states)?;
        let std: Vec<f64> = self.log_std().iter().map(|l| l.exp()).collect();
        let mut out = Vec::with_capacity(states.rows());
        for i in 0..states.rows() {
            let mean = means.row_slice(i);
            let eps = gaussian_vec(rng, mean.len(), 1.0);
            let raw: Vec<f64> = (0..mean.len()).map(|j| mean[j] + std[j] * eps[j]).collect();
            out.push(ActOutput {
                action: self.squash(&raw),
                logp: self.log_prob(mean, &raw),
                raw,
                value: values[i],
            });
        }
        Ok(out)
    }

    /// Squashed mean on the tape, `[n, action_dim]`.
    fn squashed_mean_on_tape(&self, tape: &mut Tape, states: Var) -> Result<Var> {
        let mu = self.mean_net.forward(tape, &self.store, states)?;
        let th = tape.tanh(mu);
        let half = tape.constant(Tensor::row(&self.half));
        let mid = tape.constant(Tensor::row(&self.mid));
        let scaled = tape.mul(th, half)?;
        tape.add(scaled, mid)
    }

    /// Differentiable `mean_i ||mu(s_G_i) - a_G_i||^2`.
    pub fn reg_loss_on_tape(&self, tape: &mut Tape, reg: &RegBatch) -> Result<Var> {
        let s = tape.constant(reg.states.clone());
        let a = tape.constant(reg.actions.clone());
        let mu = self.squashed_mean_on_tape(tape, s)?;
        let diff = tape.sub(mu, a)?;
        let sq = tape.square(diff);
        let per = tape.sum_cols(sq);
        Ok(tape.mean(per))
    }

    /// Value of the distillation penalty, without gradients.
    pub fn reg_loss(&self, reg: &RegBatch) -> Result<f64> {
        if reg.is_empty() {
            return Ok(0.0);
        }
        let m = self.means(&reg.states)?;
        let mut total = 0.0;
        for i in 0..m.rows() {
            let mu = self.squash(m.row_slice(i));
            total += mu
                .iter()
                .zip(reg.actions.row_slice(i))
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>();
        }
        Ok(total / m.rows() as f64)
    }

    pub fn optimizer(&self, cfg: &PolicyObjectiveConfig) -> Adam {
        Adam::new(&self.store, AdamConfig::with_lr(cfg.lr))
    }

    pub fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let low = self.mid.iter().zip(&self.half).map(|(m, h)| m - h).collect();
        let high = self.mid.iter().zip(&self.half).map(|(m, h)| m + h).collect();
        (low, high)
    }
}

/// On-policy transitions in collection order.
///
/// `next_value` is `V(s')` for non-terminal transitions and `0` for terminal
/// ones. `cut` marks the last transition of a contiguous segment (episode end
/// or end of an environment's rollout); the advantage recursion does not
/// propagate across it.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub raw_actions: Vec<f64>,
    pub actions: Vec<f64>,
    pub logp: Vec<f64>,
    pub values: Vec<f64>,
    pub next_values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub cuts: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        RolloutBuffer {
            state_dim,
            action_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp.is_empty()
    }

    pub fn push(
        &mut self,
        state: &[f64],
        act: &ActOutput,
        reward: f64,
        next_value: f64,
        cut: bool,
    ) {
        self.states.extend_from_slice(state);
        self.raw_actions.extend_from_slice(&act.raw);
        self.actions.extend_from_slice(&act.action);
        self.logp.push(act.logp);
        self.values.push(act.value);
        self.next_values.push(next_value);
        self.rewards.push(reward);
        self.cuts.push(cut);
    }

    pub fn states_tensor(&self) -> Tensor {
        Tensor::from_raw([self.len(), self.state_dim], self.states.clone())
    }

    /// `(normalized state, action)` rows for the discriminator.
    pub fn joint_tensor(&self) -> Tensor {
        let n = self.len();
        let w = self.state_dim + self.action_dim;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&self.states[i * self.state_dim..(i + 1) * self.state_dim]);
            data.extend_from_slice(&self.actions[i * self.action_dim..(i + 1) * self.action_dim]);
        }
        Tensor::from_raw([n, w], data)
    }

    /// Fills `advantages` (normalized) and `returns`.
    pub fn finish(&mut self, gamma: f64, lambda: f64) {
        let (adv, ret) = compute_gae(&self.rewards, &self.values, &self.next_values, &self.cuts, gamma, lambda);
        self.returns = ret;
        self.advantages = adv;
        normalize_advantages(&mut self.advantages);
    }
}

/// GAE(lambda): `delta_t = r_t + gamma V'_t - V_t`,
/// `A_t = delta_t + gamma lambda A_{t+1}` within a segment. Returns
/// `(advantages, advantages + values)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    cuts: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for i in (0..n).rev() {
        if cuts[i] {
            running = 0.0;
        }
        let delta = rewards[i] + gamma * next_values[i] - values[i];
        running = delta + gamma * lambda * running;
        adv[i] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shifts and scales to zero mean, unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    let std = if std > 1e-12 { std } else { 1.0 };
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Generated `(s_G, a_G)` pairs; states stay in normalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RegBatch {
    pub states: Tensor,
    pub actions: Tensor,
}

impl RegBatch {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }
}

/// Draws `n` expert-class pairs from the teacher and splits them into
/// states and bound-clipped actions. Non-finite generations are retried.
pub fn regularization_batch<R: Rng + ?Sized>(
    field: &dyn VelocityField,
    n: usize,
    state_dim: usize,
    low: &[f64],
    high: &[f64],
    cfg: &FlowConfig,
    rng: &mut R,
) -> Result<RegBatch> {
    let mut last_err = None;
    for _ in 0..=REG_RETRIES {
        match euler_generate(field, Condition::Expert, n, cfg, rng) {
            Ok(x) => {
                let (states, mut actions) = x.split_cols(state_dim);
                let ad = actions.cols();
                for (i, v) in actions.data_mut().iter_mut().enumerate() {
                    *v = v.clamp(low[i % ad], high[i % ad]);
                }
                return Ok(RegBatch { states, actions });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Numerical("generation failed".into())))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub reg_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub epochs_run: usize,
    pub early_stop: bool,
}

/// One minibatch of the rollout in tensor form.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub states: Tensor,
    pub raw_actions: Tensor,
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    /// Gathers rows `idx`; advantages must already be computed.
    pub fn minibatch(&self, idx: &[usize]) -> Minibatch {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut s = Vec::with_capacity(idx.len() * sd);
        let mut raw = Vec::with_capacity(idx.len() * ad);
        for &i in idx {
            s.extend_from_slice(&self.states[i * sd..(i + 1) * sd]);
            raw.extend_from_slice(&self.raw_actions[i * ad..(i + 1) * ad]);
        }
        Minibatch {
            states: Tensor::from_raw([idx.len(), sd], s),
            raw_actions: Tensor::from_raw([idx.len(), ad], raw),
            old_logp: idx.iter().map(|&i| self.logp[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

/// Tape handles of the minibatch objective and its parts.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveTerms {
    pub loss: Var,
    pub policy_loss: Var,
    pub value_loss: Var,
    /// Per-row probability ratios `[m, 1]`.
    pub ratio: Var,
    pub log_std_sum: Var,
    pub reg: Option<Var>,
}

impl StudentPolicy {
    /// The minimized objective on one minibatch:
    /// `-surrogate + value_coef * value_mse - entropy_coef * sum(log_std)
    /// + beta * reg_loss`, the last term only when `reg` is given.
    pub fn objective_on_tape(
        &self,
        tape: &mut Tape,
        mb: &Minibatch,
        reg: Option<&RegBatch>,
        cfg: &PolicyObjectiveConfig,
    ) -> Result<ObjectiveTerms> {
        let [m, ad] = mb.raw_actions.shape();
        let corr: Vec<f64> = (0..m)
            .map(|i| {
                mb.raw_actions
                    .row_slice(i)
                    .iter()
                    .zip(&self.half)
                    .map(|(u, h)| h.ln() + log_one_minus_tanh_sq(*u))
                    .sum::<f64>()
                    + 0.5 * ad as f64 * (2.0 * PI).ln()
            })
            .collect();
        let sv = tape.constant(mb.states.clone());
        let mu = self.mean_net.forward(tape, &self.store, sv)?;
        let ls = tape.param(&self.store, self.log_std);
        let neg_ls = tape.scale(ls, -1.0);
        let inv_std = tape.exp(neg_ls);
        let rawv = tape.constant(mb.raw_actions.clone());
        let centered = tape.sub(rawv, mu)?;
        let z = tape.mul(centered, inv_std)?;
        let z2 = tape.square(z);
        let quad = tape.sum_cols(z2);
        let quad = tape.scale(quad, -0.5);
        let ls_sum = tape.sum(ls);
        let logp = tape.sub(quad, ls_sum)?;
        let corr = tape.constant(Tensor::from_raw([m, 1], corr));
        let logp = tape.sub(logp, corr)?;
        let oldv = tape.constant(Tensor::from_raw([m, 1], mb.old_logp.clone()));
        let log_ratio = tape.sub(logp, oldv)?;
        let ratio = tape.exp(log_ratio);
        let advv = tape.constant(Tensor::from_raw([m, 1], mb.advantages.clone()));
        let s1 = tape.mul(ratio, advv)?;
        let clipped_ratio = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        let s2 = tape.mul(clipped_ratio, advv)?;
        let surr = tape.minimum(s1, s2)?;
        let surr_mean = tape.mean(surr);
        let policy_loss = tape.scale(surr_mean, -1.0);

        let v = self.value_net.forward(tape, &self.store, sv)?;
        let retv = tape.constant(Tensor::from_raw([m, 1], mb.returns.clone()));
        let verr = tape.sub(v, retv)?;
        let verr2 = tape.square(verr);
        let value_loss = tape.mean(verr2);

        let vterm = tape.scale(value_loss, cfg.value_coef);
        let mut loss = tape.add(policy_loss, vterm)?;
        if cfg.entropy_coef != 0.0 {
            let ent = tape.scale(ls_sum, -cfg.entropy_coef);
            loss = tape.add(loss, ent)?;
        }
        let mut reg_var = None;
        if let Some(reg) = reg.filter(|r| !r.is_empty()) {
            let r = self.reg_loss_on_tape(tape, reg)?;
            let rterm = tape.scale(r, cfg.beta);
            loss = tape.add(loss, rterm)?;
            reg_var = Some(r);
        }
        Ok(ObjectiveTerms {
            loss,
            policy_loss,
            value_loss,
            ratio,
            log_std_sum: ls_sum,
            reg: reg_var,
        })
    }
}

/// Clipped-surrogate update over `buf` for `cfg.epochs` shuffled passes.
///
/// With `beta > 0` and a non-empty `reg`, every minibatch loss also carries
/// `beta * reg_loss`. With `beta == 0` the regularizer is only reported.
pub fn policy_update<R: Rng + ?Sized>(
    policy: &mut StudentPolicy,
    adam: &mut Adam,
    buf: &RolloutBuffer,
    reg: Option<&RegBatch>,
    cfg: &PolicyObjectiveConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if buf.advantages.len() != buf.len() {
        return Err(Error::Usage("advantages not computed for this buffer".into()));
    }
    let n = buf.len();
    let ad = buf.action_dim;
    let use_reg = cfg.beta > 0.0 && reg.is_some_and(|r| !r.is_empty());
    let entropy_const = ad as f64 * 0.5 * (1.0 + (2.0 * PI).ln());
    let mut stats = UpdateStats::default();
    let mut batches = 0usize;
    let mut clipped = 0usize;
    let mut seen = 0usize;
    let mut order: Vec<usize> = (0..n).collect();

    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(rng);
        stats.epochs_run += 1;
        for chunk in order.chunks(cfg.minibatch_size) {
            let m = chunk.len();
            let mb = buf.minibatch(chunk);
            let mut tape = Tape::new();
            let terms = policy.objective_on_tape(&mut tape, &mb, reg.filter(|_| use_reg), cfg)?;
            let (loss, policy_loss, value_loss, ratio, ls_sum) =
                (terms.loss, terms.policy_loss, terms.value_loss, terms.ratio, terms.log_std_sum);
            let reg_value = terms.reg.map(|r| tape.item(r));

            let loss_value = tape.item(loss);
            if !loss_value.is_finite() {
                return Err(Error::Numerical(format!(
                    "policy loss is {loss_value} (policy {}, value {})",
                    tape.item(policy_loss),
                    tape.item(value_loss)
                )));
            }
            tape.backward(loss, &mut policy.store)?;
            // Policy and value heads are clipped separately so a large value
            // error cannot drown the policy gradient.
            let mut actor = policy.mean_net.param_ids();
            actor.push(policy.log_std);
            policy.store.clip_grad_norm_of(&actor, cfg.max_grad_norm);
            policy.store.clip_grad_norm_of(&policy.value_net.param_ids(), cfg.max_grad_norm);
            adam.step(&mut policy.store)?;
            let clamped: Vec<f64> = policy.log_std().to_vec();
            policy.set_log_std(&clamped);

            let ratios = tape.value(ratio).data();
            let mean_ratio = ratios.iter().sum::<f64>() / m as f64;
            clipped += ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip).count();
            seen += m;
            batches += 1;
            stats.policy_loss += tape.item(policy_loss);
            stats.value_loss += tape.item(value_loss);
            stats.entropy += tape.item(ls_sum) + entropy_const;
            if let Some(r) = reg_value {
                stats.reg_loss += r;
            }
            if mean_ratio < RATIO_GUARD.0 || mean_ratio > RATIO_GUARD.1 {
                stats.early_stop = true;
                break 'epochs;
            }
        }
    }
    let b = batches.max(1) as f64;
    stats.policy_loss /= b;
    stats.value_loss /= b;
    stats.entropy /= b;
    stats.clip_fraction = clipped as f64 / seen.max(1) as f64;
    stats.reg_loss = match (use_reg, reg) {
        (true, _) => stats.reg_loss / b,
        (false, Some(r)) => policy.reg_loss(r)?,
        (false, None) => 0.0,
    };
    Ok(stats)
}
