//! Trains the flow-matching discriminator to tell scripted-expert pairs from
//! random-action pairs and prints the resulting rewards.
//!
//!     cargo run --release --example discriminator

use fmirl::disc::{DiscConfig, DiscObjective, FmDiscriminator};
use fmirl::env::EnvSpec;
use fmirl::flow::FlowConfig;
use fmirl::harness::{generate_expert, train::joint_rows, NormStats};
use fmirl::nn::Tensor;
use fmirl::rng::stream;
use rand::Rng;

fn main() -> fmirl::Result<()> {
    let spec = EnvSpec::point_goal();
    let data = generate_expert(&spec, 20, 0);
    let states = data.states();
    let norm = NormStats::from_states(&states)?;
    let expert = joint_rows(&norm, &states, &data.actions());

    let mut rng = stream(3, 0);
    let random: Vec<f64> = (0..2 * states.rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let agent = joint_rows(&norm, &states, &Tensor::new([states.rows(), 2], random)?);

    let flow = FlowConfig {
        joint_dim: 6,
        hidden_layers: 3,
        hidden_units: 64,
        ..Default::default()
    };
    let cfg = DiscConfig {
        objective: DiscObjective::Logistic,
        lr: 1e-3,
        samples_reward: 16,
        ..Default::default()
    };
    let mut disc = FmDiscriminator::new(&flow, &cfg, &mut rng)?;
    for epoch in 0..=300 {
        let loss = disc.train_epoch(&expert, &agent, &mut rng)?;
        if epoch % 100 == 0 {
            let re = disc.reward(&expert, &mut rng)?;
            let ra = disc.reward(&agent, &mut rng)?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            println!("epoch {epoch:>3}  loss {loss:.4}  reward expert {:+.3}  random {:+.3}", mean(&re), mean(&ra));
        }
    }
    Ok(())
}
