mod common;

use fmirl::env::{
    maze_blocked, min_steps_to_goal, reset, run_episode, scripted_expert, step, EnvSpec, Episode,
};
use fmirl::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[test]
fn goal_spread_scales_with_noise() {
    let goals = |noise: f64| -> Vec<f64> {
        let spec = EnvSpec::point_goal().with_noise(noise);
        let mut rng = stream(11, 0);
        (0..10_000).map(|_| reset(&spec, &mut rng)[2]).collect()
    };
    let ratio = std_dev(&goals(2.25)) / std_dev(&goals(1.0));
    assert!((ratio / 2.25 - 1.0).abs() < 0.05, "std ratio {ratio}");
}

#[test]
fn expert_solves_point_goal() {
    let spec = EnvSpec::point_goal();
    let mut rng = stream(3, 0);
    let mut lengths = 0usize;
    let mut bound = 0usize;
    for _ in 0..1000 {
        let mut ep = Episode::start(&spec, &mut rng);
        bound += min_steps_to_goal(&spec, &ep.state);
        loop {
            let a = scripted_expert(&spec, &ep.state);
            let r = ep.step(&a);
            if r.done {
                assert!(r.success, "expert failed from an episode");
                break;
            }
        }
        lengths += ep.t;
    }
    let ratio = lengths as f64 / bound as f64;
    assert!(ratio <= 1.2, "mean length / lower bound = {ratio}");
}

#[test]
fn expert_solves_maze() {
    let spec = EnvSpec::maze_cont();
    let mut rng = stream(4, 0);
    let wins = (0..1000)
        .filter(|_| run_episode(&spec, &mut rng, |s| scripted_expert(&spec, s)).success)
        .count();
    assert!(wins >= 950, "maze expert success {wins}/1000");
}

/// Brute-force reference: sweep the candidate move in small increments and
/// report whether any intermediate point along one axis lands in a wall.
fn axis_blocked(x: f64, y: f64, dx: f64, dy: f64) -> bool {
    maze_blocked(x + dx, y + dy)
}

#[test]
fn maze_collisions_match_geometric_reference() {
    let spec = EnvSpec::maze_cont();
    let mut rng = stream(5, 0);
    let mut checked = 0;
    while checked < 20_000 {
        let x: f64 = rng.gen_range(-1.0..1.0);
        let y: f64 = rng.gen_range(-1.0..1.0);
        if maze_blocked(x, y) {
            continue;
        }
        let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let (dx, dy) = (0.1 * a[0], 0.1 * a[1]);
        let r = step(&spec, &[x, y, 0.0, 0.0], &a);
        let nx = if axis_blocked(x, y, dx, 0.0) { x } else { x + dx };
        let ny = if axis_blocked(nx, y, 0.0, dy) { y } else { y + dy };
        assert_eq!((r.next_state[0], r.next_state[1]), (nx, ny));
        assert!(!maze_blocked(r.next_state[0], r.next_state[1]));
        // A blocked axis leaves its coordinate unchanged, the other moves.
        if nx == x && dx != 0.0 && ny != y {
            assert_eq!(r.next_state[1], y + dy);
        }
        checked += 1;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..common::pt_config() })]

    #[test]
    fn trajectories_stay_in_arena(seed in 0u64..10_000, maze in any::<bool>(),
                                  actions in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..120)) {
        let spec = if maze { EnvSpec::maze_cont() } else { EnvSpec::point_goal() };
        let (lo, hi) = spec.arena();
        let mut ep = Episode::start(&spec, &mut stream(seed, 0));
        for (ax, ay) in actions {
            let r = ep.step(&[ax, ay]);
            for v in &r.next_state {
                prop_assert!(*v >= lo && *v <= hi);
            }
            if r.done { break; }
        }
    }

    #[test]
    fn same_seed_same_actions_same_trajectory(seed in 0u64..10_000,
                                               actions in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..60)) {
        for spec in [EnvSpec::point_goal(), EnvSpec::maze_cont()] {
            let run = || {
                let mut ep = Episode::start(&spec, &mut stream(seed, 1));
                let mut states = vec![ep.state.clone()];
                for (ax, ay) in &actions {
                    states.push(ep.step(&[*ax, *ay]).next_state);
                }
                states
            };
            prop_assert_eq!(run(), run());
        }
    }
}
