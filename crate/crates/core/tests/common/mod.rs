//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use fmirl::agent::{Minibatch, PolicyObjectiveConfig, RegBatch, StudentPolicy};
use fmirl::flow::{Condition, VelocityField};
use fmirl::nn::{Activation, Mlp, ParamStore, Tape, Tensor, Var};
use fmirl::rng::{gaussian_vec, stream};
use fmirl::Result;
use rand::Rng;

/// Step and relative-error floor used by every finite-difference check.
pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-3;

/// 16-parameter conditional field over 2-D points: `[x, t, c] -> 2 -> 2`.
#[derive(Clone)]
pub struct TinyField {
    pub store: ParamStore,
    mlp: Mlp,
}

impl TinyField {
    pub fn new(seed: u64) -> Self {
        let mut rng = stream(seed, 0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "tiny", &[4, 2, 2], Activation::Tanh, 1.0, &mut rng).unwrap();
        // Non-zero biases so every parameter has a generic gradient.
        let flat: Vec<f64> = store.flat_values().iter().map(|v| v + 0.1 * rng.gen_range(-1.0..1.0)).collect();
        store.set_flat_values(&flat);
        TinyField { store, mlp }
    }
}

impl VelocityField for TinyField {
    fn joint_dim(&self) -> usize {
        2
    }

    fn velocity(&self, tape: &mut Tape, x: Var, t: &[f64], cond: &[Condition]) -> Result<Var> {
        let n = tape.shape(x)[0];
        let mut extra = Vec::with_capacity(2 * n);
        for i in 0..n {
            extra.push(t[i]);
            extra.push(cond[i].index() as f64);
        }
        let extra = tape.constant(Tensor::new([n, 2], extra)?);
        let input = tape.concat(&[x, extra])?;
        self.mlp.forward(tape, &self.store, input)
    }
}

/// Compares reverse-mode gradients of `loss` with central differences over
/// every parameter reachable through `store`. Returns `(params, max rel err)`.
pub fn grad_check<T>(
    model: &mut T,
    store: fn(&mut T) -> &mut ParamStore,
    loss: impl Fn(&T, &mut Tape) -> Result<Var>,
) -> (usize, f64) {
    store(model).zero_grad();
    let mut tape = Tape::new();
    let l = loss(model, &mut tape).unwrap();
    tape.backward(l, store(model)).unwrap();
    let analytic = store(model).flat_grads();
    store(model).zero_grad();

    let base = store(model).flat_values();
    let mut numeric = Vec::with_capacity(base.len());
    let eval = |m: &mut T, v: &[f64]| {
        store(m).set_flat_values(v);
        let mut tape = Tape::new();
        let l = loss(m, &mut tape).unwrap();
        tape.item(l)
    };
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + FD_STEP;
        let up = eval(model, &p);
        p[i] = base[i] - FD_STEP;
        let down = eval(model, &p);
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    store(model).set_flat_values(&base);
    (base.len(), fmirl::nn::max_relative_error(&analytic, &numeric, FD_FLOOR))
}

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor {
    Tensor::new([rows, cols], gaussian_vec(rng, rows * cols, scale)).unwrap()
}

/// 11-parameter student: 2-D state, 1-D action in `[-1, 1]`, one hidden unit.
pub fn tiny_policy(seed: u64) -> (StudentPolicy, PolicyObjectiveConfig) {
    let cfg = PolicyObjectiveConfig {
        hidden_layers: 1,
        hidden_units: 1,
        ..Default::default()
    };
    let mut rng = stream(seed, 0);
    let mut p = StudentPolicy::new(2, &[-1.0], &[1.0], &cfg, &mut rng).unwrap();
    let flat: Vec<f64> = p.store().flat_values().iter().map(|v| v + 0.3 * rng.gen_range(-1.0..1.0)).collect();
    p.store_mut().set_flat_values(&flat);
    (p, cfg)
}

/// A minibatch whose stored log-probabilities are perturbed so the ratios
/// spread across both sides of the clip band.
pub fn spread_minibatch(policy: &StudentPolicy, n: usize, seed: u64) -> Minibatch {
    let mut rng = stream(seed, 1);
    let states = random_tensor(n, policy.state_dim(), 1.0, &mut rng);
    let outs = policy.act_batch(&states, &mut rng).unwrap();
    let raw: Vec<f64> = outs.iter().flat_map(|o| o.raw.clone()).collect();
    Minibatch {
        states,
        raw_actions: Tensor::new([n, policy.action_dim()], raw).unwrap(),
        old_logp: outs.iter().map(|o| o.logp + rng.gen_range(-0.4..0.4)).collect(),
        advantages: gaussian_vec(&mut rng, n, 1.0),
        returns: gaussian_vec(&mut rng, n, 1.0),
    }
}

pub fn random_reg_batch(policy: &StudentPolicy, n: usize, seed: u64) -> RegBatch {
    let mut rng = stream(seed, 2);
    RegBatch {
        states: random_tensor(n, policy.state_dim(), 1.0, &mut rng),
        actions: Tensor::new(
            [n, policy.action_dim()],
            (0..n * policy.action_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap(),
    }
}

pub fn tiny_store(f: &mut TinyField) -> &mut ParamStore {
    &mut f.store
}

/// Integration tests live outside `src/`, where proptest cannot place its
/// regression files; failures print the seed instead.
pub fn pt_config() -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        failure_persistence: None,
        ..Default::default()
    }
}

/// Modes at (1, 1) and (-1, -1), sd 0.2, equal weight.
pub fn two_mode_data(n: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, 0);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let m = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let e = gaussian_vec(&mut rng, 2, 0.2);
        data.extend([m + e[0], m + e[1]]);
    }
    Tensor::new([n, 2], data).unwrap()
}

/// Per-mode frequency and mean of 1000 samples from a flow fitted to
/// [`two_mode_data`]; mode 0 is the one at (1, 1).
pub struct MixtureFit {
    pub freqs: [f64; 2],
    pub means: [[f64; 2]; 2],
    pub first_loss: f64,
    pub last_loss: f64,
}

pub struct TwoModeModel {
    pub net: fmirl::flow::VectorFieldNet,
    pub cfg: fmirl::flow::FlowConfig,
    pub data: Tensor,
    pub losses: Vec<f64>,
}

/// Flow model fitted to `two_mode_data`.
pub fn train_two_modes(steps: usize, seed: u64) -> TwoModeModel {
    use fmirl::flow::{train_cfm, FlowConfig, VectorFieldNet};
    use fmirl::nn::{Adam, AdamConfig};
    let data = two_mode_data(2000, seed);
    let cfg = FlowConfig {
        joint_dim: 2,
        hidden_layers: 3,
        hidden_units: 64,
        num_steps: 50,
        ..Default::default()
    };
    let mut rng = stream(seed, 1);
    let mut net = VectorFieldNet::new(&cfg, &mut rng).unwrap();
    let mut adam = Adam::new(net.store(), AdamConfig::with_lr(1e-3));
    let losses = train_cfm(&mut net, &mut adam, &data, Condition::Expert, steps, 256, &mut rng).unwrap();
    TwoModeModel { net, cfg, data, losses }
}

pub fn fit_two_modes(steps: usize, seed: u64) -> MixtureFit {
    use fmirl::flow::euler_generate;
    let TwoModeModel { net, cfg, losses, .. } = train_two_modes(steps, seed);
    let mut rng = stream(seed, 3);
    let avg = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let k = 100.min(steps);
    let x = euler_generate(&net, Condition::Expert, 1000, &cfg, &mut rng).unwrap();
    let mut sums = [[0.0; 2]; 2];
    let mut counts = [0usize; 2];
    for i in 0..1000 {
        let r = x.row_slice(i);
        let m = (r[0] + r[1] < 0.0) as usize;
        counts[m] += 1;
        sums[m][0] += r[0];
        sums[m][1] += r[1];
    }
    let mean = |m: usize| [sums[m][0] / counts[m].max(1) as f64, sums[m][1] / counts[m].max(1) as f64];
    MixtureFit {
        freqs: [counts[0] as f64 / 1000.0, counts[1] as f64 / 1000.0],
        means: [mean(0), mean(1)],
        first_loss: avg(&losses[..k]),
        last_loss: avg(&losses[steps - k..]),
    }
}
