//! Behavior cloning with a state-conditioned flow policy, evaluated across
//! the noise sweep.
//!
//!     cargo run --release --example flow_policy_bc

use fmirl::baselines::{train_fp_bc, FlowPolicyConfig};
use fmirl::env::{EnvSpec, NOISE_SWEEP};
use fmirl::harness::{evaluate, generate_expert, NormStats};
use fmirl::rng::stream;

fn main() -> fmirl::Result<()> {
    let spec = EnvSpec::point_goal();
    let data = generate_expert(&spec, 20, 0);
    let norm = NormStats::from_states(&data.states())?;
    let cfg = FlowPolicyConfig {
        train_steps: 2000,
        num_steps: 20,
        ..Default::default()
    };
    let mut rng = stream(5, 0);
    let states = norm.normalize_rows(&data.states());
    let (fp, losses) = train_fp_bc(&states, &data.actions(), &spec.action_low, &spec.action_high, &cfg, &mut rng)?;
    println!("{} transitions, final loss {:.4}", data.len(), losses.last().unwrap());
    for m in NOISE_SWEEP {
        let s = spec.clone().with_noise(m);
        let ev = evaluate(&s, 100, 0, |x| fp.act_batch(&norm.normalize_rows(x), &mut rng))?;
        println!("noise x{m:<4} success {:.2}  return {:.2}", ev.success_rate, ev.mean_return);
    }
    Ok(())
}
