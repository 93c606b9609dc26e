//! The adversarial baseline: an MLP discriminator whose logit is the reward,
//! trained on the same step budget as FM-IRL would get.
//!
//!     cargo run --release --example gail

use fmirl::harness::{cmd_gen_expert, train_seed, Method, RunConfig};

fn main() -> fmirl::Result<()> {
    let dir = std::env::temp_dir().join("fmirl-gail-example");
    let cfg = RunConfig {
        method: Method::Gail,
        total_env_steps: 100_000,
        eval_every: 5,
        expert_dataset: Some(dir.join("expert.jsonl")),
        out_dir: dir.join("gail"),
        ..Default::default()
    };
    cmd_gen_expert(&cfg, 0, cfg.expert_dataset.as_ref().unwrap())?;
    let run = train_seed(&cfg, 0)?;
    println!("{} env steps, eval success {:.2}", run.env_steps, run.final_eval.success_rate);
    Ok(())
}
