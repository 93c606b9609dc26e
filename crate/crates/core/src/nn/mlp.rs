use rand::Rng;
use serde::{Deserialize, Serialize};

use super::store::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Silu => tape.silu(x),
        }
    }
}

#[derive(Clone, Debug)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

/// Fully connected network: activation after every hidden layer, linear
/// output. Weights are `[in, out]` so a batch multiplies as `x · W + b`.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Layer>,
    sizes: Vec<usize>,
    activation: Activation,
}

impl Mlp {
    /// Registers layers `{prefix}.{i}.weight` / `{prefix}.{i}.bias` in
    /// `store`. Weights use Glorot-uniform init; the last layer is further
    /// multiplied by `out_scale`. Biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        activation: Activation,
        out_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "network '{prefix}' needs at least two non-zero layer sizes, got {sizes:?}"
            )));
        }
        let n_layers = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if i + 1 == n_layers {
                bound *= out_scale;
            }
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-1.0..=1.0) * bound)
                .collect();
            let weight = store.add(format!("{prefix}.{i}.weight"), Tensor::new([fan_in, fan_out], w)?)?;
            let bias = store.add(format!("{prefix}.{i}.bias"), Tensor::zeros([1, fan_out]))?;
            layers.push(Layer { weight, bias });
        }
        Ok(Mlp {
            layers,
            sizes: sizes.to_vec(),
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Weight and bias handles of every layer.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    fn check_layer(&self, store: &ParamStore, i: usize, cols: usize) -> Result<()> {
        let l = &self.layers[i];
        let w = store.value(l.weight).shape();
        if w[0] != cols {
            return Err(Error::Config(format!(
                "layer '{}' expects {} input features, got {cols}",
                store.name(l.weight),
                w[0]
            )));
        }
        if store.value(l.bias).shape() != [1, w[1]] {
            return Err(Error::Config(format!(
                "layer '{}' has bias shape {:?} for {} outputs",
                store.name(l.bias),
                store.value(l.bias).shape(),
                w[1]
            )));
        }
        Ok(())
    }

    /// Differentiable forward pass.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            self.check_layer(store, i, tape.shape(h)[1])?;
            let w = tape.param(store, l.weight);
            let b = tape.param(store, l.bias);
            h = tape.affine(h, w, b)?;
            if i + 1 < self.layers.len() {
                h = self.activation.on_tape(tape, h);
            }
        }
        Ok(h)
    }

    /// Forward pass without recording anything.
    pub fn infer(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            self.check_layer(store, i, h.cols())?;
            let w = store.value(l.weight);
            let b = store.value(l.bias).data();
            let (n, k, m) = (h.rows(), w.rows(), w.cols());
            let mut out = Vec::with_capacity(n * m);
            for _ in 0..n {
                out.extend_from_slice(b);
            }
            gemm(n, k, m, h.data(), false, w.data(), false, &mut out, true);
            if i + 1 < self.layers.len() {
                let act = self.activation;
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = Tensor::from_raw([n, m], out);
        }
        Ok(h)
    }
}

/// Evaluates `net` on `input` without building a tape.
pub fn mlp_forward(net: &Mlp, params: &ParamStore, input: &Tensor) -> Result<Tensor> {
    net.infer(params, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(store: &mut ParamStore, name: &str, values: &[f64]) {
        let id = store.find(name).unwrap();
        store.value_mut(id).data_mut().copy_from_slice(values);
    }

    #[test]
    fn zero_network_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "m", &[3, 5, 2], Activation::Silu, 1.0, &mut rng).unwrap();
        let zeros = vec![0.0; store.num_scalars()];
        store.set_flat_values(&zeros);
        let out = net.infer(&store, &Tensor::row(&[0.3, -2.0, 7.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "m", &[2, 2], Activation::Tanh, 1.0, &mut rng).unwrap();
        set(&mut store, "m.0.weight", &[1.0, 0.0, 0.0, 1.0]);
        set(&mut store, "m.0.bias", &[0.0, 0.0]);
        let x = Tensor::row(&[0.7, -3.5]);
        assert_eq!(net.infer(&store, &x).unwrap(), x);
    }

    #[test]
    fn one_hidden_unit_hand_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "m", &[2, 1, 1], Activation::Tanh, 1.0, &mut rng).unwrap();
        set(&mut store, "m.0.weight", &[1.0, 1.0]);
        set(&mut store, "m.0.bias", &[0.0]);
        set(&mut store, "m.1.weight", &[2.0]);
        set(&mut store, "m.1.bias", &[0.0]);
        let out = net.infer(&store, &Tensor::row(&[0.5, 0.5])).unwrap().item();
        assert!((out - 2.0 * 1.0f64.tanh()).abs() < 1e-15);
        assert!((out - 1.5232).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "policy", &[3, 4, 1], Activation::Relu, 1.0, &mut rng).unwrap();
        let err = net.infer(&store, &Tensor::row(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("policy.0.weight")));
    }

    #[test]
    fn tape_and_inference_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "m", &[3, 8, 8, 2], Activation::Silu, 1.0, &mut rng).unwrap();
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]]).unwrap();
        let a = net.infer(&store, &x).unwrap();
        let b = net.infer(&store, &x).unwrap();
        assert_eq!(a, b);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = net.forward(&mut tape, &store, xv).unwrap();
        for (p, q) in tape.value(y).data().iter().zip(a.data()) {
            assert!((p - q).abs() < 1e-14);
        }
    }
}
