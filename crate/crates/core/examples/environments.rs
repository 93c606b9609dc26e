//! The two toy tasks under their scripted experts, across the reset-noise
//! sweep.
//!
//!     cargo run --release --example environments

use fmirl::env::{run_episode, scripted_expert, EnvSpec, NOISE_SWEEP};
use fmirl::rng::stream;

fn main() {
    for base in [EnvSpec::point_goal(), EnvSpec::maze_cont()] {
        println!("{} (horizon {}, success radius {})", base.name.as_str(), base.horizon, base.success_threshold);
        for m in NOISE_SWEEP {
            let spec = base.clone().with_noise(m);
            let mut rng = stream(4, 0);
            let eps: Vec<_> = (0..200).map(|_| run_episode(&spec, &mut rng, |s| scripted_expert(&spec, s))).collect();
            let ok = eps.iter().filter(|e| e.success).count();
            let len = eps.iter().map(|e| e.length).sum::<usize>() as f64 / eps.len() as f64;
            println!("  noise x{m:<4}  success {ok:>3}/200  mean length {len:.1}");
        }
    }
}
