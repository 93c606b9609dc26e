//! Toy continuous-control tasks with scripted experts.
//!
//! Both tasks share the observation `(px, py, gx, gy)` (agent position, goal
//! position) and a 2-D action in `[-1, 1]^2` that moves the agent by
//! `step_size * action` per step.
//!
//! * `point_goal`: open arena `[-1.5, 1.5]^2`. The agent starts uniform in
//!   `[-1, 1]^2`; the goal is uniform in `[-0.5 m, 0.5 m]^2` where `m` is the
//!   noise multiplier.
//! * `maze_cont`: `[-1, 1]^2` split into 5x5 cells of width 0.4 with a wall
//!   row that forces a detour (layout below). Start and goal sit at fixed
//!   cells with a uniform jitter of half-width `0.1 m`, kept inside the cell.
//!
//! ```text
//! row 4   G . . . .
//! row 3   . . . . .
//! row 2   # # # # .
//! row 1   . . . . .
//! row 0   S . . . .
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PointGoal,
    MazeCont,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::PointGoal => "point_goal",
            EnvKind::MazeCont => "maze_cont",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
    pub success_threshold: f64,
    /// Displacement per unit action.
    pub step_size: f64,
    /// Multiplier on the reset perturbation; 1.0 is the training setting.
    pub noise_mult: f64,
}

/// Noise multipliers of the generalization sweep.
pub const NOISE_SWEEP: [f64; 6] = [1.0, 1.25, 1.5, 1.75, 2.0, 2.25];

const POINT_ARENA: f64 = 1.5;
const POINT_START: f64 = 1.0;
const POINT_GOAL_BASE: f64 = 0.5;

const MAZE_CELLS: usize = 5;
const MAZE_CELL: f64 = 0.4;
const MAZE_JITTER: f64 = 0.1;
/// Largest offset from a cell centre a jittered start or goal may take.
const MAZE_JITTER_LIMIT: f64 = 0.18;
/// `true` marks a wall; indexed `[row][col]` with row 0 at the bottom.
const MAZE_WALLS: [[bool; MAZE_CELLS]; MAZE_CELLS] = [
    [false, false, false, false, false],
    [false, false, false, false, false],
    [true, true, true, true, false],
    [false, false, false, false, false],
    [false, false, false, false, false],
];
const MAZE_START: (usize, usize) = (0, 0);
const MAZE_GOAL: (usize, usize) = (4, 0);

impl EnvSpec {
    pub fn point_goal() -> Self {
        EnvSpec {
            name: EnvKind::PointGoal,
            state_dim: STATE_DIM,
            action_dim: ACTION_DIM,
            action_low: vec![-1.0; ACTION_DIM],
            action_high: vec![1.0; ACTION_DIM],
            horizon: 50,
            success_threshold: 0.05,
            step_size: 0.1,
            noise_mult: 1.0,
        }
    }

    pub fn maze_cont() -> Self {
        EnvSpec {
            name: EnvKind::MazeCont,
            state_dim: STATE_DIM,
            action_dim: ACTION_DIM,
            action_low: vec![-1.0; ACTION_DIM],
            action_high: vec![1.0; ACTION_DIM],
            horizon: 100,
            success_threshold: 0.1,
            step_size: 0.1,
            noise_mult: 1.0,
        }
    }

    pub fn new(kind: EnvKind) -> Self {
        match kind {
            EnvKind::PointGoal => Self::point_goal(),
            EnvKind::MazeCont => Self::maze_cont(),
        }
    }

    pub fn with_noise(mut self, noise_mult: f64) -> Self {
        self.noise_mult = noise_mult;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("env horizon must be at least 1".into()));
        }
        if !(self.noise_mult >= 1.0 && self.noise_mult.is_finite()) {
            return Err(Error::Config(format!(
                "env noise_mult must be finite and at least 1.0, got {}",
                self.noise_mult
            )));
        }
        if self.state_dim != STATE_DIM
            || self.action_dim != ACTION_DIM
            || self.action_low.len() != ACTION_DIM
            || self.action_high.len() != ACTION_DIM
        {
            return Err(Error::Config(format!(
                "{} has {STATE_DIM} state and {ACTION_DIM} action dimensions",
                self.name.as_str()
            )));
        }
        let bounds_ok = self
            .action_low
            .iter()
            .zip(&self.action_high)
            .all(|(l, h)| l.is_finite() && h.is_finite() && l < h);
        if !bounds_ok {
            return Err(Error::Config("action bounds must be finite with low < high".into()));
        }
        if !(self.success_threshold > 0.0 && self.step_size > 0.0) {
            return Err(Error::Config("success threshold and step size must be positive".into()));
        }
        Ok(())
    }

    /// Hash of everything except the noise multiplier, which may differ
    /// between training and evaluation.
    pub fn hash(&self) -> String {
        let identity = EnvSpec {
            noise_mult: 1.0,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&identity).expect("env spec serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (l, h))| a.clamp(*l, *h))
            .collect()
    }

    /// Inclusive bounds every position coordinate stays within.
    pub fn arena(&self) -> (f64, f64) {
        match self.name {
            EnvKind::PointGoal => (-POINT_ARENA, POINT_ARENA),
            EnvKind::MazeCont => (-1.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    /// Negative Euclidean distance to the goal after the move.
    pub true_reward: f64,
    pub done: bool,
    pub success: bool,
}

/// A running episode.
#[derive(Clone, Debug)]
pub struct Episode {
    pub spec: EnvSpec,
    pub state: Vec<f64>,
    pub t: usize,
}

impl Episode {
    pub fn start<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Episode {
        Episode {
            spec: spec.clone(),
            state: reset(spec, rng),
            t: 0,
        }
    }

    pub fn step(&mut self, action: &[f64]) -> StepResult {
        let mut res = step(&self.spec, &self.state, action);
        self.t += 1;
        if self.t >= self.spec.horizon {
            res.done = true;
        }
        self.state = res.next_state.clone();
        res
    }
}

fn cell_center(row: usize, col: usize) -> (f64, f64) {
    (
        -1.0 + MAZE_CELL * (col as f64 + 0.5),
        -1.0 + MAZE_CELL * (row as f64 + 0.5),
    )
}

/// Maze cell `(row, col)` containing a point of `[-1, 1]^2`.
pub fn maze_cell(x: f64, y: f64) -> (usize, usize) {
    let idx = |v: f64| (((v + 1.0) / MAZE_CELL).floor().max(0.0) as usize).min(MAZE_CELLS - 1);
    (idx(y), idx(x))
}

/// True when the point lies outside the maze or inside a wall cell.
pub fn maze_blocked(x: f64, y: f64) -> bool {
    if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
        return true;
    }
    let (r, c) = maze_cell(x, y);
    MAZE_WALLS[r][c]
}

fn jittered_cell<R: Rng + ?Sized>(cell: (usize, usize), noise_mult: f64, rng: &mut R) -> (f64, f64) {
    let (cx, cy) = cell_center(cell.0, cell.1);
    let half = MAZE_JITTER * noise_mult;
    let jx = rng.gen_range(-half..=half).clamp(-MAZE_JITTER_LIMIT, MAZE_JITTER_LIMIT);
    let jy = rng.gen_range(-half..=half).clamp(-MAZE_JITTER_LIMIT, MAZE_JITTER_LIMIT);
    (cx + jx, cy + jy)
}

pub fn reset<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Vec<f64> {
    match spec.name {
        EnvKind::PointGoal => {
            let px = rng.gen_range(-POINT_START..=POINT_START);
            let py = rng.gen_range(-POINT_START..=POINT_START);
            let half = POINT_GOAL_BASE * spec.noise_mult;
            let gx = rng.gen_range(-half..=half).clamp(-POINT_ARENA, POINT_ARENA);
            let gy = rng.gen_range(-half..=half).clamp(-POINT_ARENA, POINT_ARENA);
            vec![px, py, gx, gy]
        }
        EnvKind::MazeCont => {
            let (px, py) = jittered_cell(MAZE_START, spec.noise_mult, rng);
            let (gx, gy) = jittered_cell(MAZE_GOAL, spec.noise_mult, rng);
            vec![px, py, gx, gy]
        }
    }
}

fn goal_distance(state: &[f64]) -> f64 {
    ((state[0] - state[2]).powi(2) + (state[1] - state[3]).powi(2)).sqrt()
}

/// Advances one step. `done` here only reflects success; [`Episode`] adds
/// horizon truncation.
pub fn step(spec: &EnvSpec, state: &[f64], action: &[f64]) -> StepResult {
    let a = spec.clip_action(action);
    let a: Vec<f64> = a.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
    let (dx, dy) = (spec.step_size * a[0], spec.step_size * a[1]);
    let (mut x, mut y) = (state[0], state[1]);
    match spec.name {
        EnvKind::PointGoal => {
            x = (x + dx).clamp(-POINT_ARENA, POINT_ARENA);
            y = (y + dy).clamp(-POINT_ARENA, POINT_ARENA);
        }
        EnvKind::MazeCont => {
            // Axis-wise resolution: a component that would end inside a wall
            // is dropped, the other one still applies.
            if !maze_blocked(x + dx, y) {
                x += dx;
            }
            if !maze_blocked(x, y + dy) {
                y += dy;
            }
        }
    }
    let next_state = vec![x, y, state[2], state[3]];
    let dist = goal_distance(&next_state);
    let success = dist < spec.success_threshold;
    StepResult {
        next_state,
        true_reward: -dist,
        done: success,
        success,
    }
}

/// Steps from `(row, col)` to the goal cell for every free cell, by BFS.
fn maze_distance_field() -> [[Option<usize>; MAZE_CELLS]; MAZE_CELLS] {
    let mut dist = [[None; MAZE_CELLS]; MAZE_CELLS];
    let mut queue = std::collections::VecDeque::new();
    dist[MAZE_GOAL.0][MAZE_GOAL.1] = Some(0);
    queue.push_back(MAZE_GOAL);
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r][c].unwrap();
        for (nr, nc) in neighbours(r, c) {
            if !MAZE_WALLS[nr][nc] && dist[nr][nc].is_none() {
                dist[nr][nc] = Some(d + 1);
                queue.push_back((nr, nc));
            }
        }
    }
    dist
}

fn neighbours(r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> {
    let n = MAZE_CELLS as isize;
    [(0isize, 1isize), (1, 0), (0, -1), (-1, 0)]
        .into_iter()
        .map(move |(dr, dc)| (r as isize + dr, c as isize + dc))
        .filter(move |&(rr, cc)| rr >= 0 && cc >= 0 && rr < n && cc < n)
        .map(|(rr, cc)| (rr as usize, cc as usize))
}

/// Scripted demonstrator.
///
/// `point_goal`: proportional control with unit gain on the displacement,
/// i.e. `clip((goal - pos) / step_size)`. `maze_cont`: the same controller
/// aimed at the centre of the next cell on the shortest corridor path, or at
/// the goal once inside the goal cell.
pub fn scripted_expert(spec: &EnvSpec, state: &[f64]) -> Vec<f64> {
    let (x, y, gx, gy) = (state[0], state[1], state[2], state[3]);
    let (tx, ty) = match spec.name {
        EnvKind::PointGoal => (gx, gy),
        EnvKind::MazeCont => {
            let cell = maze_cell(x, y);
            let goal_cell = maze_cell(gx, gy);
            if cell == goal_cell {
                (gx, gy)
            } else {
                let field = maze_distance_field();
                let next = neighbours(cell.0, cell.1)
                    .filter(|&(r, c)| field[r][c].is_some())
                    .min_by_key(|&(r, c)| field[r][c].unwrap());
                match next {
                    Some((r, c)) => cell_center(r, c),
                    None => (gx, gy),
                }
            }
        }
    };
    spec.clip_action(&[(tx - x) / spec.step_size, (ty - y) / spec.step_size])
}

/// Fewest steps any policy could need to reach the success radius under the
/// box-bounded action set.
pub fn min_steps_to_goal(spec: &EnvSpec, state: &[f64]) -> usize {
    let cheb = (state[0] - state[2]).abs().max((state[1] - state[3]).abs());
    let per_step = spec.step_size * spec.action_high[0].abs().max(spec.action_low[0].abs());
    ((cheb - spec.success_threshold) / per_step).ceil().max(0.0) as usize
}

/// Outcome of one complete episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub success: bool,
    pub ret: f64,
    pub length: usize,
}

/// Runs `policy` from a fresh reset until success or the horizon.
pub fn run_episode<R: Rng + ?Sized>(
    spec: &EnvSpec,
    rng: &mut R,
    mut policy: impl FnMut(&[f64]) -> Vec<f64>,
) -> EpisodeSummary {
    let mut ep = Episode::start(spec, rng);
    let mut ret = 0.0;
    loop {
        let a = policy(&ep.state);
        let res = ep.step(&a);
        ret += res.true_reward;
        if res.done {
            return EpisodeSummary {
                success: res.success,
                ret,
                length: ep.t,
            };
        }
    }
}
