//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! The property checks (1-5) and the determinism check (10) always run. The
//! end-to-end training checks (6-9) take the better part of an hour on one
//! core and run only with `FMIRL_ACCEPTANCE=full`; otherwise they print SKIP.
//! Full runs write into `FMIRL_ACCEPTANCE_DIR` (default: a directory under
//! the cargo target dir). The process exits non-zero if any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use fmirl::disc::{disc_forward_with, disc_loss_from_outputs, disc_loss_on_tape, DiscConfig, DiscObjective, RewardOutput};
use fmirl::flow::{cfm_loss_with, dist_from_draws, estimate_dist, AffineField, Condition, FlowConfig, PathDraws, VectorFieldNet};
use fmirl::agent::StudentPolicy;
use fmirl::harness::{cmd_eval, cmd_gen_expert, run_dir, train_seed, RunConfig, RunSummary};
use fmirl::nn::{Tape, Tensor};
use fmirl::rng::stream;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} [{id:>2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }

    fn skip(&self, id: u32, name: &str) {
        println!("SKIP [{id:>2}] {name}: long training run; set FMIRL_ACCEPTANCE=full");
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---- 1: gradients ------------------------------------------------------

fn gradient_suite(r: &mut Report) {
    let t0 = Instant::now();
    let mut worst: Vec<(&str, usize, f64)> = Vec::new();
    let mut rng = stream(100, 0);

    let x1 = random_tensor(8, 2, 1.0, &mut rng);
    let draws = PathDraws::single(8, 2, 0.5, &mut rng);
    let cond: Vec<Condition> = (0..8).map(|i| if i % 2 == 0 { Condition::Expert } else { Condition::Agent }).collect();
    let mut f = TinyField::new(100);
    let (n, e) = grad_check(&mut f, tiny_store, |f, tape| cfm_loss_with(tape, f, &x1, &cond, &draws));
    worst.push(("cfm", n, e));

    for (name, objective) in [("disc", DiscObjective::Adversarial), ("disc-logistic", DiscObjective::Logistic)] {
        let expert = random_tensor(6, 2, 1.0, &mut rng);
        let agent = random_tensor(5, 2, 1.5, &mut rng);
        let ed = PathDraws::stratified(6, 3, 2, 0.5, &mut rng);
        let ad = PathDraws::stratified(5, 3, 2, 0.5, &mut rng);
        let cfg = DiscConfig {
            objective,
            temperature: 0.7,
            ..Default::default()
        };
        let mut f = TinyField::new(101);
        let (n, e) = grad_check(&mut f, tiny_store, |f, tape| disc_loss_on_tape(tape, f, &expert, &ed, &agent, &ad, &cfg));
        worst.push((name, n, e));
    }

    let (mut p, cfg) = tiny_policy(102);
    let mb = spread_minibatch(&p, 12, 102);
    let reg = random_reg_batch(&p, 7, 102);
    let (n, e) = grad_check(&mut p, StudentPolicy::store_mut, |p, tape| Ok(p.objective_on_tape(tape, &mb, Some(&reg), &cfg)?.loss));
    worst.push(("policy+beta", n, e));

    let el = t0.elapsed();
    let max_err = worst.iter().map(|w| w.2).fold(0.0, f64::max);
    let max_params = worst.iter().map(|w| w.1).max().unwrap();
    let pass = max_err < 1e-4 && max_params <= 16 && el < Duration::from_secs(30);
    let parts: Vec<String> = worst.iter().map(|(k, n, e)| format!("{k} {e:.1e} ({n} params)")).collect();
    r.line(1, "gradient suite", pass, format!("{} < 1e-4; {:.2} s < 30 s", parts.join(", "), secs(el)));
}

// ---- 2-4: closed forms --------------------------------------------------

fn analytic_dist(r: &mut Report) {
    let t0 = Instant::now();
    let zero = AffineField {
        dim: 4,
        scale: 0.0,
        offset: vec![0.0; 4],
    };
    let x1 = Tensor::row(&[1.0, 0.5, 0.0, 0.0]);
    let d = estimate_dist(&zero, &x1, Condition::Expert, 10_000, &mut stream(200, 0), 0.5).unwrap()[0];
    let el = t0.elapsed();
    let rel = (d / 2.25 - 1.0).abs();
    r.line(
        2,
        "analytic distance",
        rel < 0.05 && el < Duration::from_secs(5),
        format!("estimate {d:.4} vs 2.25 (rel {rel:.4} < 0.05); {:.3} s < 5 s", secs(el)),
    );
}

fn reward_identity(r: &mut Report) {
    let t0 = Instant::now();
    let cfg = FlowConfig {
        joint_dim: 6,
        hidden_layers: 2,
        hidden_units: 32,
        ..Default::default()
    };
    let mut rng = stream(300, 0);
    let net = VectorFieldNet::new(&cfg, &mut rng).unwrap();
    let x = random_tensor(100, 6, 1.0, &mut rng);
    let draws = PathDraws::stratified(100, 16, 6, 0.5, &mut rng);
    let tau = 0.1;
    let out = disc_forward_with(&net, &x, &draws, tau).unwrap();
    let d0 = dist_from_draws(&net, &x, Condition::Agent, &draws).unwrap();
    let d1 = dist_from_draws(&net, &x, Condition::Expert, &draws).unwrap();
    let err = (0..100)
        .map(|i| (out[i].log_d - out[i].log_one_minus_d - tau * (d0[i] - d1[i])).abs())
        .fold(0.0, f64::max);
    let el = t0.elapsed();
    r.line(
        3,
        "reward identity",
        err < 1e-9 && el < Duration::from_secs(5),
        format!("max |logit - tau (Dist0 - Dist1)| = {err:.1e} < 1e-9 over 100 pairs; {:.3} s < 5 s", secs(el)),
    );
}

fn half_plug_in(r: &mut Report) {
    let want = -2.0 * 2f64.ln();
    let half = RewardOutput::from_distances(1.7, 1.7, 0.1);
    let from_outputs = disc_loss_from_outputs(&[half; 3], &[half; 5], &DiscConfig::default());
    // The same through the differentiable path with a label-blind field.
    let field = AffineField {
        dim: 2,
        scale: -0.4,
        offset: vec![0.1, 0.3],
    };
    let mut rng = stream(400, 0);
    let e = random_tensor(4, 2, 1.0, &mut rng);
    let a = random_tensor(6, 2, 1.0, &mut rng);
    let ed = PathDraws::stratified(4, 2, 2, 0.5, &mut rng);
    let ad = PathDraws::stratified(6, 2, 2, 0.5, &mut rng);
    let mut tape = Tape::new();
    let l = disc_loss_on_tape(&mut tape, &field, &e, &ed, &a, &ad, &DiscConfig::default()).unwrap();
    let err = (from_outputs - want).abs().max((tape.item(l) - want).abs());
    r.line(4, "D = 1/2 plug-in", err < 1e-12, format!("loss {from_outputs:.15} vs -2 ln 2 (err {err:.1e} < 1e-12)"));
}

// ---- 5: generative fit ---------------------------------------------------

fn generative_fit(r: &mut Report) {
    let t0 = Instant::now();
    let steps = 6000;
    let fit = fit_two_modes(steps, 500);
    let el = t0.elapsed();
    let centres = [1.0, -1.0];
    let mean_err = (0..2)
        .flat_map(|k| fit.means[k].iter().map(move |m| (m - centres[k]).abs()))
        .fold(0.0, f64::max);
    let freq_err = fit.freqs.iter().map(|f| (f - 0.5).abs()).fold(0.0, f64::max);
    r.line(
        5,
        "two-mode fit",
        mean_err < 0.1 && freq_err < 0.1 && steps <= 10_000 && el < Duration::from_secs(180),
        format!(
            "freqs {:.3}/{:.3}, mean err {mean_err:.3} < 0.1, freq err {freq_err:.3} < 0.1 after {steps} steps; {:.1} s < 180 s",
            fit.freqs[0],
            fit.freqs[1],
            secs(el)
        ),
    );
}

// ---- 10: determinism through the binary ---------------------------------

const TINY: &str = r#"
env = "point_goal"
seeds = [0]
total_env_steps = 1024
num_envs = 2
rollout_horizon = 128
eval_episodes = 5
eval_every = 2
expert_dataset = "expert.jsonl"
fm_pretrain_steps = 20

[flow]
hidden_layers = 1
hidden_units = 16
num_steps = 5

[disc]
samples_reward = 4
objective = "logistic"

[policy]
hidden_units = 16
reg_batch_size = 32
epochs = 2

[fp]
hidden_units = 16
num_steps = 5
train_steps = 50

[gail]
hidden_units = 16
"#;

fn fmirl(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fmirl"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("fmirl {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool, String> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok(read(a)? == read(b)?)
}

fn determinism_inner(dir: &Path) -> Result<Vec<String>, String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut checked = Vec::new();
    let mut diff = Vec::new();
    let mut note = |what: String, same: bool| {
        if !same {
            diff.push(what.clone());
        }
        checked.push(what);
    };
    let base = dir.join("fmirl.toml");
    std::fs::write(&base, format!("method = \"fmirl\"\n{TINY}")).unwrap();
    fmirl(&["gen-expert", "--config", &s(&base)])?;
    fmirl(&["gen-expert", "--config", &s(&base), "--out", &s(&dir.join("expert2.jsonl"))])?;
    note("gen-expert".into(), same_bytes(&dir.join("expert.jsonl"), &dir.join("expert2.jsonl"))?);
    for method in ["fmirl", "gail", "ppo_true_reward", "fp_bc"] {
        let cfg = dir.join(format!("{method}.toml"));
        std::fs::write(&cfg, format!("method = \"{method}\"\n{TINY}")).unwrap();
        let (a, b) = (dir.join(format!("{method}_a")), dir.join(format!("{method}_b")));
        fmirl(&["train", "--config", &s(&cfg), "--out", &s(&a)])?;
        fmirl(&["train", "--config", &s(&cfg), "--out", &s(&b)])?;
        note(format!("train {method}"), same_bytes(&a.join("seed_0/metrics.jsonl"), &b.join("seed_0/metrics.jsonl"))?);
        // Checkpoints embed the config, whose out_dir differs by construction.
        let ck = |d: &Path| -> Result<serde_json::Value, String> {
            let text = std::fs::read_to_string(d.join("seed_0/checkpoint.json")).map_err(|e| e.to_string())?;
            let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            v["config"]["out_dir"] = serde_json::Value::Null;
            Ok(v)
        };
        note(format!("checkpoint {method}"), ck(&a)? == ck(&b)?);
    }
    let run = dir.join("fmirl_a");
    for tag in ["1", "2"] {
        fmirl(&["eval", "--config", &s(&base), "--checkpoint", &s(&run), "--noise", "1.0,1.5", "--out", &s(&dir.join(format!("eval{tag}.json")))])?;
        fmirl(&["export", &s(dir), "--out", &s(&dir.join(format!("export{tag}.csv")))])?;
    }
    note("eval".into(), same_bytes(&dir.join("eval1.json"), &dir.join("eval2.json"))?);
    note("export".into(), same_bytes(&dir.join("export1.csv"), &dir.join("export2.csv"))?);
    drop(note);
    if diff.is_empty() {
        Ok(checked)
    } else {
        Err(format!("outputs differ: {}", diff.join(", ")))
    }
}

fn determinism(r: &mut Report) {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    match determinism_inner(dir.path()) {
        Ok(checked) => r.line(
            10,
            "determinism",
            true,
            format!("{} outputs byte-identical across repeated commands ({:.1} s)", checked.len(), secs(t0.elapsed())),
        ),
        Err(e) => r.line(10, "determinism", false, e),
    }
}

// ---- 6-9: end-to-end training ---------------------------------------------

struct Runs {
    work: PathBuf,
}

impl Runs {
    fn config(&self, name: &str) -> RunConfig {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
        let mut cfg = RunConfig::load(&path).unwrap();
        cfg.out_dir = self.work.join(name);
        if cfg.method.needs_expert() {
            let data = self.work.join(format!("expert_{}.jsonl", cfg.env.as_str()));
            if !data.is_file() {
                cmd_gen_expert(&cfg, 0, &data).unwrap();
            }
            cfg.expert_dataset = Some(data);
        }
        cfg
    }

    /// Trains every configured seed; returns each run with its wall time.
    fn train(&self, name: &str) -> Result<(RunConfig, Vec<(RunSummary, Duration)>), String> {
        let cfg = self.config(name);
        let mut out = Vec::new();
        for &seed in &cfg.seeds {
            let t0 = Instant::now();
            let s = train_seed(&cfg, seed).map_err(|e| format!("{name} seed {seed}: {e}"))?;
            let el = t0.elapsed();
            println!("  .. {name} seed {seed}: success {:.3} after {} steps ({:.0} s)", s.final_eval.success_rate, s.env_steps, secs(el));
            out.push((s, el));
        }
        Ok((cfg, out))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn successes(runs: &[(RunSummary, Duration)]) -> Vec<f64> {
    runs.iter().map(|(s, _)| s.final_eval.success_rate).collect()
}

/// Mean periodic eval success up to `limit` env steps, averaged over seeds.
fn early_success(runs: &[(RunSummary, Duration)], limit: usize) -> Result<f64, String> {
    let mut per_seed = Vec::new();
    for (s, _) in runs {
        let path = s.dir.join("metrics.jsonl");
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let evals: Vec<f64> = text
            .lines()
            .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
            .filter(|row| row["env_steps"].as_u64().is_some_and(|n| n as usize <= limit))
            .filter_map(|row| row["success_rate"].as_f64())
            .collect();
        if evals.is_empty() {
            return Err(format!("no evals before {limit} steps in {}", path.display()));
        }
        per_seed.push(mean(&evals));
    }
    Ok(mean(&per_seed))
}

fn fmt(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/")
}

/// Non-increasing, allowing one rise of at most 0.03.
fn degrades(xs: &[f64]) -> bool {
    let rises: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.03)
}

fn end_to_end(r: &mut Report, work: PathBuf) -> Result<(), String> {
    std::fs::create_dir_all(&work).map_err(|e| e.to_string())?;
    println!("  .. training runs under {}", work.display());
    let runs = Runs { work };

    let (ppo_cfg, ppo) = runs.train("ppo_point")?;
    let ppo_s = successes(&ppo);
    let ppo_t: Duration = ppo.iter().map(|x| x.1).sum();
    let within = ppo.iter().all(|(s, _)| s.env_steps <= ppo_cfg.total_env_steps) && ppo_cfg.total_env_steps <= 200_000;
    r.line(
        6,
        "RL sanity",
        ppo_s.iter().all(|s| *s >= 0.95) && within && ppo_t < Duration::from_secs(600),
        format!("success {} (each >= 0.95) within {} steps; {:.0} s < 600 s", fmt(&ppo_s), ppo[0].0.env_steps, secs(ppo_t)),
    );

    let (point_cfg, point) = runs.train("fmirl_point")?;
    let (_, maze) = runs.train("fmirl_maze")?;
    let p3 = successes(&point[..3]);
    let m3 = successes(&maze[..3]);
    let t7: Duration = point[..3].iter().chain(&maze[..3]).map(|x| x.1).sum();
    let within = point.iter().chain(&maze).all(|(s, _)| s.env_steps <= 300_000);
    r.line(
        7,
        "FM-IRL end-to-end",
        mean(&p3) >= 0.8 && mean(&m3) >= 0.6 && within && t7 < Duration::from_secs(1800),
        format!(
            "point_goal {} mean {:.3} >= 0.80, maze_cont {} mean {:.3} >= 0.60; {:.0} s < 1800 s",
            fmt(&p3),
            mean(&p3),
            fmt(&m3),
            mean(&m3),
            secs(t7)
        ),
    );

    let (fp_cfg, _) = runs.train("fp_point")?;
    let noise = [1.0, 1.5, 2.25];
    let ck = |cfg: &RunConfig| -> Vec<PathBuf> { cfg.seeds.iter().map(|&s| run_dir(cfg, s).join("checkpoint.json")).collect() };
    let fm_tab = cmd_eval(&point_cfg, &ck(&point_cfg), &noise, Some(&point_cfg.out_dir.join("eval.json"))).map_err(|e| e.to_string())?;
    let fp_tab = cmd_eval(&fp_cfg, &ck(&fp_cfg), &noise, Some(&fp_cfg.out_dir.join("eval.json"))).map_err(|e| e.to_string())?;
    let fm_curve: Vec<f64> = noise.iter().map(|&m| fm_tab.success_at(m).unwrap()).collect();
    let fp_curve: Vec<f64> = noise.iter().map(|&m| fp_tab.success_at(m).unwrap()).collect();
    r.line(
        8,
        "generalization direction",
        fm_curve[1] >= fp_curve[1] && degrades(&fm_curve) && degrades(&fp_curve),
        format!(
            "at noise 1.5 fmirl {:.3} vs fp_bc {:.3} (need >=); curves over 1.0/1.5/2.25: fmirl {}, fp_bc {}",
            fm_curve[1],
            fp_curve[1],
            fmt(&fm_curve),
            fmt(&fp_curve)
        ),
    );

    let (_, maze0) = runs.train("fmirl_maze_beta0")?;
    let (b2, b0) = (successes(&maze), successes(&maze0));
    r.line(
        9,
        "beta ablation direction",
        mean(&b2) >= mean(&b0) || std(&b2) < std(&b0),
        format!(
            "beta=2 {} (mean {:.3}, std {:.3}) vs beta=0 {} (mean {:.3}, std {:.3})",
            fmt(&b2),
            mean(&b2),
            std(&b2),
            fmt(&b0),
            mean(&b0),
            std(&b0)
        ),
    );
    // Not part of the verdict: final success saturates, so also show how fast each arm gets there.
    let (e2, e0) = (early_success(&maze, 100_000)?, early_success(&maze0, 100_000)?);
    println!("  .. mean eval success over the first 100k steps: beta=2 {e2:.3}, beta=0 {e0:.3}");
    Ok(())
}

fn main() {
    // Under `cargo test -- <filter>` style arguments this runner has no
    // sub-tests to select; `--list` must still answer for tooling.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let full = std::env::var("FMIRL_ACCEPTANCE").is_ok_and(|v| v == "full");
    let mut r = Report { failed: 0 };
    gradient_suite(&mut r);
    analytic_dist(&mut r);
    reward_identity(&mut r);
    half_plug_in(&mut r);
    generative_fit(&mut r);
    if full {
        let work = std::env::var_os("FMIRL_ACCEPTANCE_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
        if let Err(e) = end_to_end(&mut r, work) {
            r.line(6, "end-to-end runs", false, e);
        }
    } else {
        r.skip(6, "RL sanity");
        r.skip(7, "FM-IRL end-to-end");
        r.skip(8, "generalization direction");
        r.skip(9, "beta ablation direction");
    }
    determinism(&mut r);
    if r.failed > 0 {
        println!("{} criterion line(s) failed", r.failed);
        std::process::exit(1);
    }
    println!("all run criteria passed");
}
