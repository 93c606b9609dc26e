//! Fits a conditional flow to a two-mode Gaussian mixture and samples it
//! with Euler steps.
//!
//!     cargo run --release --example flow_mixture

use fmirl::flow::{euler_generate, train_cfm, Condition, FlowConfig, VectorFieldNet};
use fmirl::nn::{Adam, AdamConfig, Tensor};
use fmirl::rng::{gaussian_vec, stream};
use rand::Rng;

fn main() -> fmirl::Result<()> {
    let mut rng = stream(1, 0);
    let n = 2000;
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let m = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let e = gaussian_vec(&mut rng, 2, 0.2);
        data.extend([m + e[0], m + e[1]]);
    }
    let data = Tensor::new([n, 2], data)?;

    let cfg = FlowConfig {
        joint_dim: 2,
        hidden_layers: 3,
        hidden_units: 64,
        num_steps: 50,
        ..Default::default()
    };
    let mut net = VectorFieldNet::new(&cfg, &mut rng)?;
    let mut adam = Adam::new(net.store(), AdamConfig::with_lr(1e-3));
    let losses = train_cfm(&mut net, &mut adam, &data, Condition::Expert, 4000, 256, &mut rng)?;
    for k in [0, 999, 1999, 3999] {
        println!("step {:>4}  loss {:.4}", k + 1, losses[k]);
    }

    let x = euler_generate(&net, Condition::Expert, 1000, &cfg, &mut rng)?;
    let upper: Vec<&[f64]> = (0..1000).map(|i| x.row_slice(i)).filter(|r| r[0] + r[1] > 0.0).collect();
    let mx = upper.iter().map(|r| r[0]).sum::<f64>() / upper.len() as f64;
    let my = upper.iter().map(|r| r[1]).sum::<f64>() / upper.len() as f64;
    println!("{} of 1000 samples in the (1, 1) mode, mean ({mx:.3}, {my:.3})", upper.len());
    Ok(())
}
