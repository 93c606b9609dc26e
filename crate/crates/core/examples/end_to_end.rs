//! The full pipeline through the library: expert demonstrations, FM-IRL
//! training without the true reward, noise-sweep evaluation and CSV export.
//! A shortened budget; `configs/fmirl_point.toml` holds the full one.
//!
//!     cargo run --release --example end_to_end

use fmirl::disc::DiscObjective;
use fmirl::harness::{cmd_eval, cmd_export, cmd_gen_expert, cmd_train, run_dir, Method, RunConfig};

fn main() -> fmirl::Result<()> {
    let dir = std::env::temp_dir().join("fmirl-end-to-end");
    let mut cfg = RunConfig {
        method: Method::Fmirl,
        seeds: vec![0],
        total_env_steps: 100_000,
        eval_every: 5,
        expert_dataset: Some(dir.join("expert.jsonl")),
        out_dir: dir.join("fmirl"),
        fm_pretrain_steps: 2000,
        ..Default::default()
    };
    cfg.flow.hidden_layers = 3;
    cfg.flow.hidden_units = 64;
    cfg.flow.num_steps = 20;
    cfg.disc.samples_reward = 16;
    cfg.disc.objective = DiscObjective::Logistic;
    cfg.policy.lr = 1e-3;

    let e = cmd_gen_expert(&cfg, 0, cfg.expert_dataset.as_ref().unwrap())?;
    println!("expert: {} episodes, success {:.2}", e.episodes, e.success_rate);
    for r in cmd_train(&cfg)? {
        println!("trained seed {}: {} steps, success {:.2}", r.seed, r.env_steps, r.final_eval.success_rate);
    }
    let ck = vec![run_dir(&cfg, 0).join("checkpoint.json")];
    let table = cmd_eval(&cfg, &ck, &[1.0, 1.5, 2.25], None)?;
    for s in &table.summary {
        println!("noise x{:<4} success {:.2}", s.noise_mult, s.success_mean);
    }
    let x = cmd_export(&cfg.out_dir, &dir.join("metrics.csv"))?;
    println!("exported {} rows to {}", x.rows, dir.join("metrics.csv").display());
    Ok(())
}
