use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fmirl::harness::{cmd_eval, cmd_export, cmd_gen_expert, cmd_train, find_checkpoints, RunConfig};
use fmirl::{Error, Result};

#[derive(Parser)]
#[command(name = "fmirl", about = "Flow-matching inverse RL on toy control tasks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record scripted expert demonstrations.
    GenExpert {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output trajectory file (defaults to the config's expert_dataset).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one run per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate checkpoints across noise multipliers.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint file or run directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "1.0")]
        noise: String,
        /// Results file (defaults to eval.json next to the checkpoints).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge metrics streams under a directory into one CSV.
    Export {
        /// Directory holding metrics.jsonl files.
        metrics: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    Ok(cfg)
}

fn parse_noise(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::Usage(format!("bad noise multiplier {s:?}"))))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenExpert { config, seed, out } => {
            let cfg = load(&config, seed, None)?;
            let out = out
                .or_else(|| cfg.expert_dataset.clone())
                .ok_or_else(|| Error::Usage("give --out or set expert_dataset".into()))?;
            let s = cmd_gen_expert(&cfg, cfg.seeds[0], &out)?;
            println!(
                "wrote {} episodes ({} transitions) to {}: success rate {:.3}, mean return {:.3}",
                s.episodes,
                s.transitions,
                out.display(),
                s.success_rate,
                s.mean_return
            );
        }
        Cmd::Train { config, seed, out } => {
            let cfg = load(&config, seed, out)?;
            for r in cmd_train(&cfg)? {
                println!(
                    "{} seed {}: {} env steps, eval success {:.3}, mean return {:.3} ({})",
                    r.method.as_str(),
                    r.seed,
                    r.env_steps,
                    r.final_eval.success_rate,
                    r.final_eval.mean_return,
                    r.dir.display()
                );
            }
        }
        Cmd::Eval { config, checkpoint, noise, out } => {
            let cfg = load(&config, None, None)?;
            let noise = parse_noise(&noise)?;
            let cks = find_checkpoints(&checkpoint)?;
            let out = out.unwrap_or_else(|| {
                let dir = if checkpoint.is_dir() { checkpoint.clone() } else { checkpoint.parent().unwrap_or(&checkpoint).to_path_buf() };
                dir.join(fmirl::harness::eval::EVAL_FILE)
            });
            let table = cmd_eval(&cfg, &cks, &noise, Some(&out))?;
            println!("noise  seed  success  return");
            for r in &table.rows {
                println!("{:<6} {:<5} {:<8.3} {:.3}", r.noise_mult, r.seed, r.success_rate, r.mean_return);
            }
            for s in &table.summary {
                println!("{:<6} mean  {:<8.3} {:.3}  (std {:.3})", s.noise_mult, s.success_mean, s.return_mean, s.success_std);
            }
            println!("wrote {}", out.display());
        }
        Cmd::Export { metrics, out } => {
            let out = out.unwrap_or_else(|| metrics.join("metrics.csv"));
            let s = cmd_export(&metrics, &out)?;
            println!("wrote {} rows from {} files to {} ({} malformed rows skipped)", s.rows, s.files, out.display(), s.skipped);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
