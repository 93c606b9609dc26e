//! Flow-matching discriminator and the reward it induces.
//!
//! For a joint vector `x = (s, a)` the two class distances
//! `dist_expert = Dist(x | c=1)` and `dist_agent = Dist(x | c=0)` enter a
//! two-way softmax at temperature `tau`:
//!
//! ```text
//! D(x) = exp(-tau dist_expert) / (exp(-tau dist_expert) + exp(-tau dist_agent))
//!      = sigmoid(tau (dist_agent - dist_expert))
//! r(x) = log D - log(1 - D) = tau (dist_agent - dist_expert)
//! ```

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{dist_from_draws, dist_on_tape, Condition, FlowConfig, PathDraws, VectorFieldNet, VelocityField};
use crate::nn::{softplus, Adam, AdamConfig, Tape, Tensor, Var};

/// Clamp applied to `D` wherever a probability is reported.
pub const D_CLAMP: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub temperature: f64,
    /// Draws per pair during discriminator training.
    pub samples_train: usize,
    /// Draws per pair for reward evaluation.
    pub samples_reward: usize,
    pub lr: f64,
    /// Signed class weights. The loss is
    /// `expert_weight * E_expert[log(1 - D)] - agent_weight * E_agent[log D]`,
    /// so the defaults `(1, -1)` give the plain adversarial objective.
    pub expert_weight: f64,
    pub agent_weight: f64,
    /// Passes over the fresh agent rollout per round.
    pub update_epochs: usize,
    pub batch_size: usize,
    pub objective: DiscObjective,
}

/// Which loss the discriminator minimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscObjective {
    /// The signed two-term objective with the class weights.
    #[default]
    Adversarial,
    /// Binary cross-entropy with expert pairs labeled 1 (weights unused).
    Logistic,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            temperature: 0.1,
            samples_train: 1,
            samples_reward: 100,
            lr: 1e-4,
            expert_weight: 1.0,
            agent_weight: -1.0,
            update_epochs: 1,
            batch_size: 256,
            objective: DiscObjective::Adversarial,
        }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "discriminator temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.samples_train == 0 || self.samples_reward == 0 {
            return Err(Error::Config("discriminator sample counts must be at least 1".into()));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("discriminator lr and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Discriminator value and reward for one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardOutput {
    /// `D` clamped to `[D_CLAMP, 1 - D_CLAMP]`.
    pub d: f64,
    pub r: f64,
    pub dist_expert: f64,
    pub dist_agent: f64,
    /// Unclamped `log D`.
    pub log_d: f64,
    /// Unclamped `log(1 - D)`.
    pub log_one_minus_d: f64,
}

impl RewardOutput {
    /// Builds the softmax discriminator from two distances in log space.
    pub fn from_distances(dist_expert: f64, dist_agent: f64, temperature: f64) -> RewardOutput {
        // NaN must survive the clamp so callers can report it.
        let nonneg = |d: f64| if d < 0.0 { 0.0 } else { d };
        let (dist_expert, dist_agent) = (nonneg(dist_expert), nonneg(dist_agent));
        let gap = temperature * (dist_expert - dist_agent);
        let log_d = -softplus(gap);
        let log_one_minus_d = -softplus(-gap);
        RewardOutput {
            d: log_d.exp().clamp(D_CLAMP, 1.0 - D_CLAMP),
            r: temperature * (dist_agent - dist_expert),
            dist_expert,
            dist_agent,
            log_d,
            log_one_minus_d,
        }
    }
}

/// Discriminator outputs for every row of `x`, with `samples` stratified
/// draws per row shared between the two class labels.
pub fn disc_forward<R: Rng + ?Sized>(
    field: &dyn VelocityField,
    x: &Tensor,
    samples: usize,
    rng: &mut R,
    cfg: &DiscConfig,
    noise_scale: f64,
) -> Result<Vec<RewardOutput>> {
    if samples == 0 {
        return Err(Error::Usage("discriminator needs at least one sample".into()));
    }
    if !x.all_finite() {
        return Err(Error::Data("non-finite pair passed to the discriminator".into()));
    }
    let draws = PathDraws::stratified(x.rows(), samples, x.cols(), noise_scale, rng);
    disc_forward_with(field, x, &draws, cfg.temperature)
}

/// As [`disc_forward`] with caller-supplied draws.
pub fn disc_forward_with(
    field: &dyn VelocityField,
    x: &Tensor,
    draws: &PathDraws,
    temperature: f64,
) -> Result<Vec<RewardOutput>> {
    let de = dist_from_draws(field, x, Condition::Expert, draws)?;
    let da = dist_from_draws(field, x, Condition::Agent, draws)?;
    Ok(de
        .into_iter()
        .zip(da)
        .map(|(e, a)| RewardOutput::from_distances(e, a, temperature))
        .collect())
}

/// Shaped rewards for a batch of normalized pairs using `samples_reward`
/// draws per pair.
pub fn reward<R: Rng + ?Sized>(
    field: &dyn VelocityField,
    x: &Tensor,
    cfg: &DiscConfig,
    noise_scale: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let out = disc_forward(field, x, cfg.samples_reward, rng, cfg, noise_scale)?;
    out.iter()
        .enumerate()
        .map(|(i, o)| {
            if o.r.is_finite() {
                Ok(o.r)
            } else {
                Err(Error::Numerical(format!(
                    "reward for pair {i} is {} (dist_expert {}, dist_agent {})",
                    o.r, o.dist_expert, o.dist_agent
                )))
            }
        })
        .collect()
}

/// Logit bound equivalent to clamping `D` to `[D_CLAMP, 1 - D_CLAMP]`.
pub fn logit_clamp() -> f64 {
    ((1.0 - D_CLAMP) / D_CLAMP).ln()
}

/// Per-pair logit `tau (dist_agent - dist_expert)` on the tape, clamped so
/// that `sigmoid(logit)` stays within the `D` clamp.
fn logits_on_tape(
    tape: &mut Tape,
    field: &dyn VelocityField,
    x: &Tensor,
    draws: &PathDraws,
    tau: f64,
) -> Result<Var> {
    let de = dist_on_tape(tape, field, x, Condition::Expert, draws)?;
    let da = dist_on_tape(tape, field, x, Condition::Agent, draws)?;
    let gap = tape.sub(da, de)?;
    let z = tape.scale(gap, tau);
    let c = logit_clamp();
    Ok(tape.clamp(z, -c, c))
}

/// Differentiable discriminator loss for fixed draws.
///
/// `Adversarial`: `expert_weight * E_expert[log(1 - D)] - agent_weight *
/// E_agent[log D]`. `Logistic`: `-E_expert[log D] - E_agent[log(1 - D)]`.
/// Both use `log D = -softplus(-z)` and `log(1 - D) = -softplus(z)` on the
/// clamped logit `z`, so gradients vanish once `D` reaches the clamp.
pub fn disc_loss_on_tape(
    tape: &mut Tape,
    field: &dyn VelocityField,
    expert: &Tensor,
    expert_draws: &PathDraws,
    agent: &Tensor,
    agent_draws: &PathDraws,
    cfg: &DiscConfig,
) -> Result<Var> {
    if expert.rows() == 0 || agent.rows() == 0 {
        return Err(Error::Usage("discriminator update needs expert and agent pairs".into()));
    }
    let tau = cfg.temperature;
    let ze = logits_on_tape(tape, field, expert, expert_draws, tau)?;
    let za = logits_on_tape(tape, field, agent, agent_draws, tau)?;
    match cfg.objective {
        DiscObjective::Adversarial => {
            // -log(1 - D) on expert pairs, -log D on agent pairs.
            let sp_e = tape.softplus(ze);
            let neg_za = tape.scale(za, -1.0);
            let sp_a = tape.softplus(neg_za);
            let e = tape.mean(sp_e);
            let a = tape.mean(sp_a);
            let e = tape.scale(e, -cfg.expert_weight);
            let a = tape.scale(a, cfg.agent_weight);
            tape.add(e, a)
        }
        DiscObjective::Logistic => {
            let neg_ze = tape.scale(ze, -1.0);
            let sp_e = tape.softplus(neg_ze);
            let sp_a = tape.softplus(za);
            let e = tape.mean(sp_e);
            let a = tape.mean(sp_a);
            tape.add(e, a)
        }
    }
}

/// Loss value from discriminator outputs (clamped `D`), for plug-in checks.
pub fn disc_loss_from_outputs(expert: &[RewardOutput], agent: &[RewardOutput], cfg: &DiscConfig) -> f64 {
    let mean = |xs: &[RewardOutput], f: &dyn Fn(&RewardOutput) -> f64| xs.iter().map(f).sum::<f64>() / xs.len() as f64;
    match cfg.objective {
        DiscObjective::Adversarial => {
            let e = mean(expert, &|o| (1.0 - o.d).ln());
            let a = mean(agent, &|o| o.d.ln());
            cfg.expert_weight * e - cfg.agent_weight * a
        }
        DiscObjective::Logistic => -mean(expert, &|o| o.d.ln()) - mean(agent, &|o| (1.0 - o.d).ln()),
    }
}

/// Outcome of one discriminator step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscStep {
    /// Loss before the update.
    pub loss: f64,
    /// False when the step was skipped because the loss was not finite.
    pub applied: bool,
}

/// The shared teacher model: one conditional field used both as the
/// discriminator and as the generator of regularization pairs.
#[derive(Clone, Debug)]
pub struct FmDiscriminator {
    net: VectorFieldNet,
    adam: Adam,
    cfg: DiscConfig,
    skipped_steps: usize,
}

impl FmDiscriminator {
    pub fn new<R: Rng + ?Sized>(flow: &FlowConfig, cfg: &DiscConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let net = VectorFieldNet::new(flow, rng)?;
        let adam = Adam::new(net.store(), AdamConfig::with_lr(cfg.lr));
        Ok(FmDiscriminator {
            net,
            adam,
            cfg: cfg.clone(),
            skipped_steps: 0,
        })
    }

    pub fn net(&self) -> &VectorFieldNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut VectorFieldNet {
        &mut self.net
    }

    pub fn config(&self) -> &DiscConfig {
        &self.cfg
    }

    pub fn skipped_steps(&self) -> usize {
        self.skipped_steps
    }

    pub fn noise_scale(&self) -> f64 {
        self.net.config().noise_scale
    }

    pub fn reward<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Vec<f64>> {
        reward(&self.net, x, &self.cfg, self.noise_scale(), rng)
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor, samples: usize, rng: &mut R) -> Result<Vec<RewardOutput>> {
        disc_forward(&self.net, x, samples, rng, &self.cfg, self.noise_scale())
    }

    /// One gradient step on the adversarial loss with `samples_train`
    /// stratified draws per pair. A non-finite loss skips the step.
    pub fn update<R: Rng + ?Sized>(&mut self, expert: &Tensor, agent: &Tensor, rng: &mut R) -> Result<DiscStep> {
        let d = self.net.joint_dim();
        let s = self.cfg.samples_train;
        let noise = self.noise_scale();
        let ed = PathDraws::stratified(expert.rows(), s, d, noise, rng);
        let ad = PathDraws::stratified(agent.rows(), s, d, noise, rng);
        self.update_with(expert, &ed, agent, &ad)
    }

    pub fn update_with(
        &mut self,
        expert: &Tensor,
        expert_draws: &PathDraws,
        agent: &Tensor,
        agent_draws: &PathDraws,
    ) -> Result<DiscStep> {
        let mut tape = Tape::new();
        let loss = disc_loss_on_tape(&mut tape, &self.net, expert, expert_draws, agent, agent_draws, &self.cfg)?;
        let value = tape.item(loss);
        if !value.is_finite() {
            self.skipped_steps += 1;
            log::warn!("discriminator loss is {value}; step skipped");
            return Ok(DiscStep { loss: value, applied: false });
        }
        tape.backward(loss, self.net.store_mut())?;
        if let Err(e) = self.adam.step(self.net.store_mut()) {
            self.net.store_mut().zero_grad();
            self.skipped_steps += 1;
            log::warn!("discriminator step skipped: {e}");
            return Ok(DiscStep { loss: value, applied: false });
        }
        Ok(DiscStep { loss: value, applied: true })
    }

    /// One epoch over `agent` in shuffled minibatches, each paired with an
    /// equally sized random expert minibatch. Returns the mean pre-step loss.
    pub fn train_epoch<R: Rng + ?Sized>(&mut self, expert: &Tensor, agent: &Tensor, rng: &mut R) -> Result<f64> {
        let mut order: Vec<usize> = (0..agent.rows()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let a = agent.select_rows(chunk);
            let eidx: Vec<usize> = (0..chunk.len()).map(|_| rng.gen_range(0..expert.rows())).collect();
            let e = expert.select_rows(&eidx);
            let step = self.update(&e, &a, rng)?;
            if step.applied {
                total += step.loss;
                count += 1;
            }
        }
        Ok(if count > 0 { total / count as f64 } else { f64::NAN })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::AffineField;
    use crate::rng::stream;

    #[test]
    fn equal_distances_give_half() {
        let o = RewardOutput::from_distances(3.0, 3.0, 0.1);
        assert_eq!(o.d, 0.5);
        assert_eq!(o.r, 0.0);
    }

    #[test]
    fn logistic_value() {
        let o = RewardOutput::from_distances(1.0, 2.0, 1.0);
        let expect = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((o.d - expect).abs() < 1e-15);
        assert!((o.d - 0.731059).abs() < 1e-6);
        assert_eq!(o.r, 1.0);
    }

    #[test]
    fn limits_stay_inside_unit_interval() {
        let o = RewardOutput::from_distances(0.0, 1e6, 0.1);
        assert!(o.d > 0.999 && o.d < 1.0);
        assert!(o.r > 1e4);
        let o = RewardOutput::from_distances(1e6, 0.0, 0.1);
        assert!(o.d > 0.0 && o.d < 1e-3);
    }

    #[test]
    fn reward_decreases_with_expert_distance() {
        let mut last = f64::INFINITY;
        for k in 0..50 {
            let r = RewardOutput::from_distances(0.1 * k as f64, 2.0, 0.1).r;
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn label_swap_mirrors_output() {
        let a = RewardOutput::from_distances(0.7, 2.9, 0.3);
        let b = RewardOutput::from_distances(2.9, 0.7, 0.3);
        assert!((a.d - (1.0 - b.d)).abs() < 1e-15);
        assert_eq!(a.r, -b.r);
    }

    #[test]
    fn half_discriminator_plug_in() {
        let half = RewardOutput::from_distances(1.0, 1.0, 0.1);
        let cfg = DiscConfig::default();
        let loss = disc_loss_from_outputs(&[half; 4], &[half; 3], &cfg);
        assert!((loss - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn separated_outputs_score_below_half() {
        let cfg = DiscConfig::default();
        let half = RewardOutput::from_distances(1.0, 1.0, 0.1);
        let sure_expert = RewardOutput::from_distances(0.0, 500.0, 0.1);
        let sure_agent = RewardOutput::from_distances(500.0, 0.0, 0.1);
        let base = disc_loss_from_outputs(&[half], &[half], &cfg);
        let sep = disc_loss_from_outputs(&[sure_expert], &[sure_agent], &cfg);
        assert!(sep < base);
        // Both terms bottom out at the clamp.
        assert!((sep - 2.0 * D_CLAMP.ln()).abs() < 1e-6);
    }

    #[test]
    fn nan_distance_names_pair() {
        let field = AffineField { dim: 2, scale: 0.0, offset: vec![f64::NAN, 0.0] };
        let x = Tensor::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let err = reward(&field, &x, &DiscConfig::default(), 0.5, &mut stream(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("pair 0")));
    }

    #[test]
    fn zero_field_reward_is_zero() {
        // Both labels see the same field, so the two distances coincide.
        let field = AffineField { dim: 3, scale: 0.0, offset: vec![0.0; 3] };
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3], [1.0, 0.0, -1.0]]).unwrap();
        let r = reward(&field, &x, &DiscConfig::default(), 0.5, &mut stream(1, 0)).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
    }
}
