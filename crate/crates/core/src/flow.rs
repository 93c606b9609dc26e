//! Conditional flow matching over joint state-action vectors.
//!
//! The conditional path is the straight line `x_t = (1 - t) x0 + t x1` from
//! `x0 ~ N(0, noise_scale^2 I)` to a data point `x1`, with constant target
//! velocity `u = x1 - x0`. A network `v(x, t | c)` regresses `u`; the same
//! regression error evaluated at one fixed `x1` is the per-point distance
//! used by the discriminator.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::gaussian_vec;

/// Width of the time encoding: `t`, then sin/cos at two frequencies.
pub const TIME_FEATURES: usize = 5;
/// Width of the learned per-class embedding.
pub const CONDITION_EMBED: usize = 4;

/// Rows evaluated per inference call when estimating distances.
const EVAL_CHUNK_ROWS: usize = 4096;

/// Class label fed to the field: `Expert` is `c = 1`, `Agent` is `c = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Agent,
    Expert,
}

impl Condition {
    pub fn index(self) -> usize {
        match self {
            Condition::Agent => 0,
            Condition::Expert => 1,
        }
    }

    pub fn flipped(self) -> Condition {
        match self {
            Condition::Agent => Condition::Expert,
            Condition::Expert => Condition::Agent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// `state_dim + action_dim`; zero means "take it from the environment".
    pub joint_dim: usize,
    /// Standard deviation of the start distribution.
    pub noise_scale: f64,
    /// Euler steps used for generation.
    pub num_steps: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            joint_dim: 0,
            noise_scale: 0.5,
            num_steps: 100,
            hidden_layers: 4,
            hidden_units: 128,
            activation: Activation::Silu,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.joint_dim < 2 {
            return Err(Error::Config(format!(
                "flow joint_dim must be at least 2, got {}",
                self.joint_dim
            )));
        }
        if self.num_steps == 0 {
            return Err(Error::Config("flow num_steps must be at least 1".into()));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!(
                "flow noise_scale must be positive, got {}",
                self.noise_scale
            )));
        }
        if self.hidden_layers == 0 || self.hidden_units == 0 {
            return Err(Error::Config("flow network needs a hidden layer".into()));
        }
        Ok(())
    }
}

pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let w = 2.0 * PI * t;
    [t, w.sin(), w.cos(), (2.0 * w).sin(), (2.0 * w).cos()]
}

/// One point on the straight conditional path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
    pub xt: Vec<f64>,
    pub u: Vec<f64>,
}

impl PathSample {
    pub fn at(x0: Vec<f64>, x1: Vec<f64>, t: f64) -> PathSample {
        let xt = x0.iter().zip(&x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let u = x0.iter().zip(&x1).map(|(a, b)| b - a).collect();
        PathSample { x0, x1, t, xt, u }
    }
}

/// Draws `t ~ U[0, 1]` and `x0 ~ N(0, noise_scale^2 I)` for target `x1`.
pub fn sample_path<R: Rng + ?Sized>(
    x1: &[f64],
    rng: &mut R,
    cfg: &FlowConfig,
) -> Result<PathSample> {
    if x1.len() != cfg.joint_dim {
        return Err(Error::Data(format!(
            "target has {} components, flow expects {}",
            x1.len(),
            cfg.joint_dim
        )));
    }
    if let Some(i) = x1.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("target component {i} is {}", x1[i])));
    }
    let t = rng.gen::<f64>();
    let x0 = gaussian_vec(rng, x1.len(), cfg.noise_scale);
    Ok(PathSample::at(x0, x1.to_vec(), t))
}

/// A batch of `(t, x0)` draws, `per_target` consecutive rows for each target.
#[derive(Clone, Debug)]
pub struct PathDraws {
    pub t: Vec<f64>,
    pub x0: Tensor,
    pub per_target: usize,
}

impl PathDraws {
    /// One draw per target with `t ~ U[0, 1]`.
    pub fn single<R: Rng + ?Sized>(targets: usize, dim: usize, noise: f64, rng: &mut R) -> Self {
        let mut t = Vec::with_capacity(targets);
        let mut x0 = Vec::with_capacity(targets * dim);
        for _ in 0..targets {
            t.push(rng.gen::<f64>());
            x0.extend(gaussian_vec(rng, dim, noise));
        }
        PathDraws {
            t,
            x0: Tensor::from_raw([targets, dim], x0),
            per_target: 1,
        }
    }

    /// `samples` draws per target; draw `i` takes `t = (i + u) / samples`
    /// with `u ~ U[0, 1)`, so every bin of width `1 / samples` gets one point.
    pub fn stratified<R: Rng + ?Sized>(
        targets: usize,
        samples: usize,
        dim: usize,
        noise: f64,
        rng: &mut R,
    ) -> Self {
        let rows = targets * samples;
        let mut t = Vec::with_capacity(rows);
        let mut x0 = Vec::with_capacity(rows * dim);
        for _ in 0..targets {
            for i in 0..samples {
                t.push((i as f64 + rng.gen::<f64>()) / samples as f64);
                x0.extend(gaussian_vec(rng, dim, noise));
            }
        }
        PathDraws {
            t,
            x0: Tensor::from_raw([rows, dim], x0),
            per_target: samples,
        }
    }

    pub fn rows(&self) -> usize {
        self.t.len()
    }

    pub fn targets(&self) -> usize {
        self.t.len() / self.per_target
    }

    /// Interpolants and target velocities for rows `[start, end)`.
    fn path_rows(&self, x1: &Tensor, start: usize, end: usize) -> (Tensor, Tensor) {
        let d = x1.cols();
        let mut xt = Vec::with_capacity((end - start) * d);
        let mut u = Vec::with_capacity((end - start) * d);
        for row in start..end {
            let target = x1.row_slice(row / self.per_target);
            let x0 = self.x0.row_slice(row);
            let t = self.t[row];
            for j in 0..d {
                xt.push((1.0 - t) * x0[j] + t * target[j]);
                u.push(target[j] - x0[j]);
            }
        }
        (
            Tensor::from_raw([end - start, d], xt),
            Tensor::from_raw([end - start, d], u),
        )
    }

    fn check(&self, x1: &Tensor) -> Result<()> {
        if self.targets() != x1.rows() || self.x0.cols() != x1.cols() {
            return Err(Error::Usage(format!(
                "draws cover {} targets of dim {}, batch is {:?}",
                self.targets(),
                self.x0.cols(),
                x1.shape()
            )));
        }
        Ok(())
    }
}

/// A velocity field `v(x, t | c)` over joint vectors.
pub trait VelocityField {
    fn joint_dim(&self) -> usize;

    /// Differentiable evaluation; row `i` of `x` uses `t[i]` and `cond[i]`.
    fn velocity(&self, tape: &mut Tape, x: Var, t: &[f64], cond: &[Condition]) -> Result<Var>;

    /// Evaluation without gradients.
    fn eval(&self, x: &Tensor, t: &[f64], cond: &[Condition]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let v = self.velocity(&mut tape, xv, t, cond)?;
        Ok(tape.value(v).clone())
    }
}

/// Parameter-free field `v(x, t | c) = scale * x + offset`.
///
/// Covers the zero, constant and linear-decay fields whose Euler and
/// distance behaviour is known in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineField {
    pub dim: usize,
    pub scale: f64,
    pub offset: Vec<f64>,
}

impl VelocityField for AffineField {
    fn joint_dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, tape: &mut Tape, x: Var, _t: &[f64], _c: &[Condition]) -> Result<Var> {
        let sx = tape.scale(x, self.scale);
        let off = tape.constant(Tensor::from_raw([1, self.offset.len()], self.offset.clone()));
        tape.add(sx, off)
    }

    fn eval(&self, x: &Tensor, _t: &[f64], _c: &[Condition]) -> Result<Tensor> {
        let d = x.cols();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| self.scale * v + self.offset[i % d])
            .collect();
        Ok(Tensor::from_raw(x.shape(), data))
    }
}

/// The learned field: an MLP over `[x, time features, class embedding]`.
#[derive(Clone, Debug)]
pub struct VectorFieldNet {
    store: ParamStore,
    mlp: Mlp,
    embed: ParamId,
    cfg: FlowConfig,
}

impl VectorFieldNet {
    pub fn new<R: Rng + ?Sized>(cfg: &FlowConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let d = cfg.joint_dim;
        let mut sizes = vec![d + TIME_FEATURES + CONDITION_EMBED];
        sizes.extend(std::iter::repeat(cfg.hidden_units).take(cfg.hidden_layers));
        sizes.push(d);
        let mlp = Mlp::new(&mut store, "flow", &sizes, cfg.activation, 1.0, rng)?;
        let emb = gaussian_vec(rng, 2 * CONDITION_EMBED, 1.0);
        let embed = store.add("flow.class_embedding", Tensor::new([2, CONDITION_EMBED], emb)?)?;
        Ok(VectorFieldNet {
            store,
            mlp,
            embed,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_batch(&self, rows: usize, cols: usize, t: &[f64], cond: &[Condition]) -> Result<()> {
        if cols != self.cfg.joint_dim || t.len() != rows || cond.len() != rows {
            return Err(Error::Usage(format!(
                "field input [{rows}, {cols}] with {} times and {} labels (joint_dim {})",
                t.len(),
                cond.len(),
                self.cfg.joint_dim
            )));
        }
        Ok(())
    }
}

impl VelocityField for VectorFieldNet {
    fn joint_dim(&self) -> usize {
        self.cfg.joint_dim
    }

    fn velocity(&self, tape: &mut Tape, x: Var, t: &[f64], cond: &[Condition]) -> Result<Var> {
        let [n, d] = tape.shape(x);
        self.check_batch(n, d, t, cond)?;
        let mut tf = Vec::with_capacity(n * TIME_FEATURES);
        let mut onehot = vec![0.0; n * 2];
        for i in 0..n {
            tf.extend_from_slice(&time_features(t[i]));
            onehot[i * 2 + cond[i].index()] = 1.0;
        }
        let tf = tape.constant(Tensor::from_raw([n, TIME_FEATURES], tf));
        let oh = tape.constant(Tensor::from_raw([n, 2], onehot));
        let e = tape.param(&self.store, self.embed);
        let emb = tape.matmul(oh, e)?;
        let input = tape.concat(&[x, tf, emb])?;
        self.mlp.forward(tape, &self.store, input)
    }

    fn eval(&self, x: &Tensor, t: &[f64], cond: &[Condition]) -> Result<Tensor> {
        let [n, d] = x.shape();
        self.check_batch(n, d, t, cond)?;
        let e = self.store.value(self.embed);
        let w = d + TIME_FEATURES + CONDITION_EMBED;
        let mut input = Vec::with_capacity(n * w);
        for i in 0..n {
            input.extend_from_slice(x.row_slice(i));
            input.extend_from_slice(&time_features(t[i]));
            input.extend_from_slice(e.row_slice(cond[i].index()));
        }
        self.mlp.infer(&self.store, &Tensor::from_raw([n, w], input))
    }
}

/// Per-row squared regression error `||v(x_t, t | c) - u||^2` as `[rows, 1]`.
fn row_errors_on_tape(
    tape: &mut Tape,
    field: &dyn VelocityField,
    x1: &Tensor,
    cond: &[Condition],
    draws: &PathDraws,
) -> Result<Var> {
    draws.check(x1)?;
    let (xt, u) = draws.path_rows(x1, 0, draws.rows());
    let row_cond: Vec<Condition> = (0..draws.rows())
        .map(|r| cond[r / draws.per_target])
        .collect();
    let xt = tape.constant(xt);
    let u = tape.constant(u);
    let v = field.velocity(tape, xt, &draws.t, &row_cond)?;
    let diff = tape.sub(v, u)?;
    let sq = tape.square(diff);
    Ok(tape.sum_cols(sq))
}

/// Flow-matching loss over a batch with caller-supplied draws.
pub fn cfm_loss_with(
    tape: &mut Tape,
    field: &dyn VelocityField,
    x1: &Tensor,
    cond: &[Condition],
    draws: &PathDraws,
) -> Result<Var> {
    if x1.rows() == 0 {
        return Err(Error::Usage("flow-matching loss on an empty batch".into()));
    }
    if cond.len() != x1.rows() {
        return Err(Error::Usage(format!(
            "{} labels for {} targets",
            cond.len(),
            x1.rows()
        )));
    }
    let err = row_errors_on_tape(tape, field, x1, cond, draws)?;
    Ok(tape.mean(err))
}

/// Flow-matching loss with one fresh `(t, x0)` per batch element.
pub fn cfm_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    field: &dyn VelocityField,
    x1: &Tensor,
    cond: &[Condition],
    rng: &mut R,
    noise_scale: f64,
) -> Result<Var> {
    if x1.rows() == 0 {
        return Err(Error::Usage("flow-matching loss on an empty batch".into()));
    }
    let draws = PathDraws::single(x1.rows(), x1.cols(), noise_scale, rng);
    cfm_loss_with(tape, field, x1, cond, &draws)
}

/// Differentiable per-target distance `[targets, 1]`: the mean regression
/// error over each target's draws, all under label `cond`.
pub fn dist_on_tape(
    tape: &mut Tape,
    field: &dyn VelocityField,
    x1: &Tensor,
    cond: Condition,
    draws: &PathDraws,
) -> Result<Var> {
    let labels = vec![cond; x1.rows()];
    let err = row_errors_on_tape(tape, field, x1, &labels, draws)?;
    if draws.per_target == 1 {
        return Ok(err);
    }
    let grid = tape.reshape(err, [x1.rows(), draws.per_target])?;
    let total = tape.sum_cols(grid);
    Ok(tape.scale(total, 1.0 / draws.per_target as f64))
}

/// Per-draw regression errors without gradients, one entry per draw row.
pub fn draw_errors(
    field: &dyn VelocityField,
    x1: &Tensor,
    cond: Condition,
    draws: &PathDraws,
) -> Result<Vec<f64>> {
    draws.check(x1)?;
    let rows = draws.rows();
    let mut out = Vec::with_capacity(rows);
    let chunk = (EVAL_CHUNK_ROWS / draws.per_target).max(1) * draws.per_target;
    let mut start = 0;
    while start < rows {
        let end = (start + chunk).min(rows);
        let (xt, u) = draws.path_rows(x1, start, end);
        let labels = vec![cond; end - start];
        let v = field.eval(&xt, &draws.t[start..end], &labels)?;
        for r in 0..end - start {
            let e: f64 = v
                .row_slice(r)
                .iter()
                .zip(u.row_slice(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out.push(e);
        }
        start = end;
    }
    Ok(out)
}

/// Per-target distances from fixed draws, without gradients.
pub fn dist_from_draws(
    field: &dyn VelocityField,
    x1: &Tensor,
    cond: Condition,
    draws: &PathDraws,
) -> Result<Vec<f64>> {
    let errs = draw_errors(field, x1, cond, draws)?;
    Ok(errs
        .chunks(draws.per_target)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect())
}

/// Monte-Carlo distance of every row of `x1` from the class-`cond`
/// distribution, using `samples` stratified draws per row.
pub fn estimate_dist<R: Rng + ?Sized>(
    field: &dyn VelocityField,
    x1: &Tensor,
    cond: Condition,
    samples: usize,
    rng: &mut R,
    noise_scale: f64,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::Usage("distance estimate needs at least one sample".into()));
    }
    if !x1.all_finite() {
        return Err(Error::Data("non-finite target in distance estimate".into()));
    }
    let draws = PathDraws::stratified(x1.rows(), samples, x1.cols(), noise_scale, rng);
    dist_from_draws(field, x1, cond, &draws)
}

/// Distance estimate for a single target with its Monte-Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistEstimate {
    pub mean: f64,
    /// `sd / sqrt(S)` of the per-draw errors; conservative under stratification.
    pub std_err: f64,
}

pub fn estimate_dist_with_error<R: Rng + ?Sized>(
    field: &dyn VelocityField,
    x1: &[f64],
    cond: Condition,
    samples: usize,
    rng: &mut R,
    noise_scale: f64,
) -> Result<DistEstimate> {
    if samples < 2 {
        return Err(Error::Usage("standard error needs at least two samples".into()));
    }
    let target = Tensor::new([1, x1.len()], x1.to_vec())?;
    let draws = PathDraws::stratified(1, samples, x1.len(), noise_scale, rng);
    let errs = draw_errors(field, &target, cond, &draws)?;
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    Ok(DistEstimate {
        mean,
        std_err: (var / n).sqrt(),
    })
}

/// Explicit Euler integration of `dx/dt = v(x, t | c)` from `x0` over
/// `[0, 1]` in `num_steps` equal steps.
pub fn euler_integrate(
    field: &dyn VelocityField,
    x0: Tensor,
    cond: Condition,
    num_steps: usize,
) -> Result<Tensor> {
    if num_steps == 0 {
        return Err(Error::Usage("Euler integration needs at least one step".into()));
    }
    let n = x0.rows();
    let labels = vec![cond; n];
    let dt = 1.0 / num_steps as f64;
    let mut x = x0;
    for k in 0..num_steps {
        let t = vec![k as f64 * dt; n];
        let v = field.eval(&x, &t, &labels)?;
        x.data_mut()
            .iter_mut()
            .zip(v.data())
            .for_each(|(xi, vi)| *xi += dt * vi);
        if !x.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite state during generation at Euler step {k}"
            )));
        }
    }
    Ok(x)
}

/// Generates `n` joint vectors from class `cond`.
pub fn euler_generate<R: Rng + ?Sized>(
    field: &dyn VelocityField,
    cond: Condition,
    n: usize,
    cfg: &FlowConfig,
    rng: &mut R,
) -> Result<Tensor> {
    let d = field.joint_dim();
    let x0 = Tensor::from_raw([n, d], gaussian_vec(rng, n * d, cfg.noise_scale));
    euler_integrate(field, x0, cond, cfg.num_steps)
}

/// Plain flow-matching regression of `net` onto `data` under one label.
/// Returns the loss of every step.
pub fn train_cfm<R: Rng + ?Sized>(
    net: &mut VectorFieldNet,
    adam: &mut Adam,
    data: &Tensor,
    cond: Condition,
    steps: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.rows() == 0 {
        return Err(Error::Usage("flow-matching fit on an empty dataset".into()));
    }
    let noise = net.cfg.noise_scale;
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..data.rows())).collect();
        let batch = data.select_rows(&idx);
        let labels = vec![cond; batch.rows()];
        let mut tape = Tape::new();
        let loss = cfm_loss(&mut tape, net, &batch, &labels, rng, noise)?;
        let value = tape.item(loss);
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "flow-matching loss is {value} at step {step}"
            )));
        }
        tape.backward(loss, &mut net.store)?;
        adam.step(&mut net.store)?;
        losses.push(value);
    }
    Ok(losses)
}
