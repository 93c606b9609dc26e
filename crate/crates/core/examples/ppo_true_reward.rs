//! The student policy trained with PPO on the environment's own reward; the
//! reference point for the learned-reward runs.
//!
//!     cargo run --release --example ppo_true_reward

use fmirl::harness::{train_seed, Method, RunConfig};

fn main() -> fmirl::Result<()> {
    let dir = std::env::temp_dir().join("fmirl-ppo-example");
    let cfg = RunConfig {
        method: Method::PpoTrueReward,
        total_env_steps: 60_000,
        eval_every: 5,
        out_dir: dir.clone(),
        ..Default::default()
    };
    let run = train_seed(&cfg, 0)?;
    println!(
        "{} env steps, eval success {:.2}, return {:.2}",
        run.env_steps, run.final_eval.success_rate, run.final_eval.mean_return
    );
    println!("metrics in {}", run.dir.display());
    Ok(())
}
