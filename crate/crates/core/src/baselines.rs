//! Comparison learners: a behavior-cloned flow policy and an MLP
//! discriminator for adversarial imitation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{time_features, TIME_FEATURES};
use crate::nn::{softplus, Activation, Adam, AdamConfig, Mlp, ParamStore, Tape, Tensor, Var};
use crate::rng::gaussian_vec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowPolicyConfig {
    pub noise_scale: f64,
    pub num_steps: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub lr: f64,
    pub train_steps: usize,
    pub batch_size: usize,
}

impl Default for FlowPolicyConfig {
    fn default() -> Self {
        FlowPolicyConfig {
            noise_scale: 0.5,
            num_steps: 100,
            hidden_layers: 3,
            hidden_units: 128,
            activation: Activation::Silu,
            lr: 1e-3,
            train_steps: 5000,
            batch_size: 256,
        }
    }
}

impl FlowPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale > 0.0) || self.num_steps == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(
                "flow policy needs noise_scale > 0 and positive num_steps, batch_size, lr".into(),
            ));
        }
        Ok(())
    }
}

/// Velocity over actions, conditioned on the state.
pub trait ActionField {
    fn action_dim(&self) -> usize;

    /// `a_t` is `[n, action_dim]`, `s` is `[n, state_dim]`, one time per row.
    fn velocity(&self, tape: &mut Tape, a_t: Var, s: Var, t: &[f64]) -> Result<Var>;

    fn eval(&self, a_t: &Tensor, s: &Tensor, t: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let a = tape.constant(a_t.clone());
        let s = tape.constant(s.clone());
        let v = self.velocity(&mut tape, a, s, t)?;
        Ok(tape.value(v).clone())
    }
}

/// Behavior-cloned flow policy. Actions are modeled in standardized
/// coordinates `(a - mean) / std` and mapped back before clipping.
#[derive(Clone, Debug)]
pub struct ConditionalFlowPolicy {
    store: ParamStore,
    mlp: Mlp,
    cfg: FlowPolicyConfig,
    pub state_dim: usize,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ConditionalFlowPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        low: &[f64],
        high: &[f64],
        cfg: &FlowPolicyConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let ad = low.len();
        let mut store = ParamStore::new();
        let mut sizes = vec![ad + state_dim + TIME_FEATURES];
        sizes.extend(std::iter::repeat(cfg.hidden_units).take(cfg.hidden_layers));
        sizes.push(ad);
        let mlp = Mlp::new(&mut store, "fp", &sizes, cfg.activation, 1.0, rng)?;
        Ok(ConditionalFlowPolicy {
            store,
            mlp,
            cfg: cfg.clone(),
            state_dim,
            action_mean: vec![0.0; ad],
            action_std: vec![1.0; ad],
            low: low.to_vec(),
            high: high.to_vec(),
        })
    }

    pub fn config(&self) -> &FlowPolicyConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn input(a_t: &Tensor, s: &Tensor, t: &[f64]) -> Tensor {
        let n = a_t.rows();
        let w = a_t.cols() + s.cols() + TIME_FEATURES;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(a_t.row_slice(i));
            data.extend_from_slice(s.row_slice(i));
            data.extend_from_slice(&time_features(t[i]));
        }
        Tensor::from_raw([n, w], data)
    }

    /// Samples one action per state row.
    pub fn act_batch<R: Rng + ?Sized>(&self, states: &Tensor, rng: &mut R) -> Result<Tensor> {
        fp_act(self, states, self.cfg.noise_scale, self.cfg.num_steps, rng).map(|a| self.finish(a))
    }

    /// Maps standardized generated actions back to bounds.
    fn finish(&self, mut a: Tensor) -> Tensor {
        let ad = a.cols();
        for (i, v) in a.data_mut().iter_mut().enumerate() {
            let j = i % ad;
            *v = (*v * self.action_std[j] + self.action_mean[j]).clamp(self.low[j], self.high[j]);
        }
        a
    }

    pub fn standardize_actions(&self, actions: &Tensor) -> Tensor {
        let ad = actions.cols();
        let data = actions
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.action_mean[i % ad]) / self.action_std[i % ad])
            .collect();
        Tensor::from_raw(actions.shape(), data)
    }
}

impl ActionField for ConditionalFlowPolicy {
    fn action_dim(&self) -> usize {
        self.low.len()
    }

    fn velocity(&self, tape: &mut Tape, a_t: Var, s: Var, t: &[f64]) -> Result<Var> {
        let n = tape.shape(a_t)[0];
        if t.len() != n || tape.shape(s)[0] != n {
            return Err(Error::Usage("flow policy batch rows disagree".into()));
        }
        let tf: Vec<f64> = t.iter().flat_map(|v| time_features(*v)).collect();
        let tf = tape.constant(Tensor::from_raw([n, TIME_FEATURES], tf));
        let input = tape.concat(&[a_t, s, tf])?;
        self.mlp.forward(tape, &self.store, input)
    }

    fn eval(&self, a_t: &Tensor, s: &Tensor, t: &[f64]) -> Result<Tensor> {
        if t.len() != a_t.rows() || s.rows() != a_t.rows() {
            return Err(Error::Usage("flow policy batch rows disagree".into()));
        }
        self.mlp.infer(&self.store, &Self::input(a_t, s, t))
    }
}

/// Flow-matching regression over actions with given `(t, a0)` draws:
/// `mean ||v(a_t, s, t) - (a1 - a0)||^2`.
pub fn fp_loss_with(
    tape: &mut Tape,
    field: &dyn ActionField,
    states: &Tensor,
    actions: &Tensor,
    t: &[f64],
    a0: &Tensor,
) -> Result<Var> {
    let n = actions.rows();
    if n == 0 {
        return Err(Error::Usage("flow policy loss on an empty batch".into()));
    }
    let ad = actions.cols();
    let mut at = Vec::with_capacity(n * ad);
    let mut u = Vec::with_capacity(n * ad);
    for i in 0..n {
        for (x0, x1) in a0.row_slice(i).iter().zip(actions.row_slice(i)) {
            at.push((1.0 - t[i]) * x0 + t[i] * x1);
            u.push(x1 - x0);
        }
    }
    let at = tape.constant(Tensor::from_raw([n, ad], at));
    let s = tape.constant(states.clone());
    let v = field.velocity(tape, at, s, t)?;
    let u = tape.constant(Tensor::from_raw([n, ad], u));
    let diff = tape.sub(v, u)?;
    let sq = tape.square(diff);
    let per = tape.sum_cols(sq);
    Ok(tape.mean(per))
}

/// Fits a flow policy to expert `(state, action)` rows. States should already
/// be normalized; actions are standardized internally. Returns the policy and
/// the per-step training losses.
pub fn train_fp_bc<R: Rng + ?Sized>(
    states: &Tensor,
    actions: &Tensor,
    low: &[f64],
    high: &[f64],
    cfg: &FlowPolicyConfig,
    rng: &mut R,
) -> Result<(ConditionalFlowPolicy, Vec<f64>)> {
    if states.rows() == 0 || states.rows() != actions.rows() {
        return Err(Error::Usage(format!(
            "behavior cloning needs a non-empty dataset ({} states, {} actions)",
            states.rows(),
            actions.rows()
        )));
    }
    let mut policy = ConditionalFlowPolicy::new(states.cols(), low, high, cfg, rng)?;
    let n = actions.rows() as f64;
    for j in 0..actions.cols() {
        let col: Vec<f64> = (0..actions.rows()).map(|i| actions.get(i, j)).collect();
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        policy.action_mean[j] = mean;
        policy.action_std[j] = var.sqrt().max(1e-3);
    }
    let target = policy.standardize_actions(actions);
    let mut adam = Adam::new(&policy.store, AdamConfig::with_lr(cfg.lr));
    let losses = fit_action_field(&mut policy, &mut adam, states, &target, cfg.train_steps, cfg.batch_size, rng)?;
    Ok((policy, losses))
}

/// Minibatch flow-matching steps on already standardized actions.
pub fn fit_action_field<R: Rng + ?Sized>(
    policy: &mut ConditionalFlowPolicy,
    adam: &mut Adam,
    states: &Tensor,
    actions: &Tensor,
    steps: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let ad = actions.cols();
    let noise = policy.cfg.noise_scale;
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let m = batch_size.min(states.rows().max(1)).max(1);
        let idx: Vec<usize> = (0..m).map(|_| rng.gen_range(0..states.rows())).collect();
        let s = states.select_rows(&idx);
        let a = actions.select_rows(&idx);
        let t: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let a0 = Tensor::from_raw([m, ad], gaussian_vec(rng, m * ad, noise));
        let mut tape = Tape::new();
        let loss = fp_loss_with(&mut tape, policy, &s, &a, &t, &a0)?;
        let value = tape.item(loss);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("flow policy loss is {value} at step {step}")));
        }
        tape.backward(loss, &mut policy.store)?;
        adam.step(&mut policy.store)?;
        losses.push(value);
    }
    Ok(losses)
}

/// Euler integration of `da/dt = v(a, s, t)` from `a0 ~ N(0, noise^2 I)`,
/// in the field's own coordinates (no clipping).
pub fn fp_act<R: Rng + ?Sized>(
    field: &dyn ActionField,
    states: &Tensor,
    noise: f64,
    num_steps: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let n = states.rows();
    let ad = field.action_dim();
    let a0 = Tensor::from_raw([n, ad], gaussian_vec(rng, n * ad, noise));
    fp_integrate(field, states, a0, num_steps)
}

pub fn fp_integrate(field: &dyn ActionField, states: &Tensor, a0: Tensor, num_steps: usize) -> Result<Tensor> {
    if num_steps == 0 {
        return Err(Error::Usage("Euler integration needs at least one step".into()));
    }
    let n = states.rows();
    let dt = 1.0 / num_steps as f64;
    let mut a = a0;
    for k in 0..num_steps {
        let t = vec![k as f64 * dt; n];
        let v = field.eval(&a, states, &t)?;
        a.data_mut().iter_mut().zip(v.data()).for_each(|(x, y)| *x += dt * y);
        if !a.all_finite() {
            return Err(Error::Numerical(format!("non-finite action at Euler step {k}")));
        }
    }
    Ok(a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GailConfig {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Passes over the agent rollout per round.
    pub update_epochs: usize,
}

impl Default for GailConfig {
    fn default() -> Self {
        GailConfig {
            hidden_layers: 2,
            hidden_units: 64,
            lr: 1e-4,
            batch_size: 256,
            update_epochs: 1,
        }
    }
}

/// Mean of `log D` over expert logits plus mean of `log(1 - D)` over agent
/// logits, `D = sigmoid(logit)`.
pub fn gail_objective_from_logits(expert: &[f64], agent: &[f64]) -> f64 {
    let e = expert.iter().map(|l| -softplus(-l)).sum::<f64>() / expert.len() as f64;
    let a = agent.iter().map(|l| -softplus(*l)).sum::<f64>() / agent.len() as f64;
    e + a
}

#[derive(Clone, Debug)]
pub struct MlpDiscriminator {
    store: ParamStore,
    mlp: Mlp,
    adam: Adam,
    cfg: GailConfig,
    skipped_steps: usize,
}

impl MlpDiscriminator {
    pub fn new<R: Rng + ?Sized>(joint_dim: usize, cfg: &GailConfig, rng: &mut R) -> Result<Self> {
        if cfg.hidden_layers == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
            return Err(Error::Config("gail discriminator needs hidden layers, batch_size and lr".into()));
        }
        let mut store = ParamStore::new();
        let mut sizes = vec![joint_dim];
        sizes.extend(std::iter::repeat(cfg.hidden_units).take(cfg.hidden_layers));
        sizes.push(1);
        let mlp = Mlp::new(&mut store, "gail", &sizes, Activation::Tanh, 1.0, rng)?;
        let adam = Adam::new(&store, AdamConfig::with_lr(cfg.lr));
        Ok(MlpDiscriminator {
            store,
            mlp,
            adam,
            cfg: cfg.clone(),
            skipped_steps: 0,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn config(&self) -> &GailConfig {
        &self.cfg
    }

    pub fn skipped_steps(&self) -> usize {
        self.skipped_steps
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.mlp.infer(&self.store, x)?.into_data())
    }

    /// `log D - log(1 - D)`, which for a sigmoid discriminator is the logit.
    pub fn reward(&self, x: &Tensor) -> Result<Vec<f64>> {
        let r = self.logits(x)?;
        if let Some(i) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("gail reward is {} at pair {i}", r[i])));
        }
        Ok(r)
    }

    /// Differentiable objective (to be maximized).
    pub fn objective_on_tape(&self, tape: &mut Tape, expert: &Tensor, agent: &Tensor) -> Result<Var> {
        if expert.rows() == 0 || agent.rows() == 0 {
            return Err(Error::Usage("gail round needs non-empty batches".into()));
        }
        let e = tape.constant(expert.clone());
        let le = self.mlp.forward(tape, &self.store, e)?;
        let neg = tape.scale(le, -1.0);
        let sp_e = tape.softplus(neg);
        let term_e = tape.mean(sp_e);
        let a = tape.constant(agent.clone());
        let la = self.mlp.forward(tape, &self.store, a)?;
        let sp_a = tape.softplus(la);
        let term_a = tape.mean(sp_a);
        let s = tape.add(term_e, term_a)?;
        Ok(tape.scale(s, -1.0))
    }

    /// One ascent step; returns the objective before the step.
    pub fn gail_round(&mut self, expert: &Tensor, agent: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let obj = self.objective_on_tape(&mut tape, expert, agent)?;
        let value = tape.item(obj);
        if !value.is_finite() {
            self.skipped_steps += 1;
            log::warn!("gail objective is {value}; step skipped");
            return Ok(value);
        }
        let loss = tape.scale(obj, -1.0);
        tape.backward(loss, &mut self.store)?;
        if let Err(e) = self.adam.step(&mut self.store) {
            self.store.zero_grad();
            self.skipped_steps += 1;
            log::warn!("gail step skipped: {e}");
        }
        Ok(value)
    }

    /// Shuffled agent minibatches each paired with a random expert minibatch,
    /// mirroring the flow discriminator's schedule.
    pub fn train_epoch<R: Rng + ?Sized>(&mut self, expert: &Tensor, agent: &Tensor, rng: &mut R) -> Result<f64> {
        let mut order: Vec<usize> = (0..agent.rows()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let a = agent.select_rows(chunk);
            let eidx: Vec<usize> = (0..chunk.len()).map(|_| rng.gen_range(0..expert.rows())).collect();
            let v = self.gail_round(&expert.select_rows(&eidx), &a)?;
            if v.is_finite() {
                total += v;
                count += 1;
            }
        }
        Ok(if count > 0 { total / count as f64 } else { f64::NAN })
    }
}
