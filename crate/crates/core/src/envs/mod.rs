//! Seedable gridworld tasks with per-agent observations, a global state
//! vector, a shared reward, and makespan accounting.
//!
//! Both tasks share the same simultaneous-move rules: moves into walls,
//! obstacles, contested cells, or cells whose occupant stays put are
//! cancelled (the agent stays and one collision is counted). Conflicts
//! cancel every contender, so resolution is independent of agent order.

mod eval;
mod formation;
mod warehouse;

pub use eval::{evaluate, evaluate_traced, EvalReport, TraceRecord};
pub use formation::{FormationConfig, FormationEnv};
pub use warehouse::{WarehouseConfig, WarehouseEnv};

use crate::diffnum::Matrix;
use std::collections::{HashMap, HashSet};
use thiserror::Error;

pub const N_ACTIONS: usize = 5;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("episode is done; reset before stepping")]
    EpisodeDone,
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
}

/// One agent action per step. `Stay` doubles as the interact action in the
/// warehouse task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub fn from_index(i: usize) -> Action {
        match i {
            0 => Action::Up,
            1 => Action::Down,
            2 => Action::Left,
            3 => Action::Right,
            _ => Action::Stay,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Stay => 4,
        }
    }

    /// (dx, dy) with y growing downward.
    fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

/// Episode counters exposed alongside each frame. Counters are cumulative
/// within the episode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepInfo {
    pub collisions: u64,
    pub deliveries: u64,
    pub formation_matched: bool,
    pub steps: usize,
    /// True once the task goal is reached (distinct from hitting the step
    /// limit).
    pub completed: bool,
}

/// Per-step environment output.
#[derive(Debug, Clone)]
pub struct EnvFrame {
    /// One row per agent; layout fixed per task (see task docs).
    pub obs: Matrix,
    /// Flattened 1 x global_dim state for the centralized critic.
    pub global_state: Matrix,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// A gridworld task instance. One instance is single-threaded; run
/// independent instances (with independent seeds) for parallel rollouts.
pub trait Env {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn global_dim(&self) -> usize;
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }
    fn step_limit(&self) -> usize;
    /// Start a fresh episode; same seed, same layout.
    fn reset(&mut self, seed: u64) -> Result<EnvFrame, EnvError>;
    fn step(&mut self, actions: &[Action]) -> Result<EnvFrame, EnvError>;
    /// Current agent cells, for trace dumps.
    fn positions(&self) -> Vec<(i32, i32)>;
}

pub(crate) struct MoveOutcome {
    pub positions: Vec<(i32, i32)>,
    pub collisions: u64,
}

/// Simultaneous-move resolution. Cancellation rules, applied to fixpoint:
/// walls and obstacles, mutual swaps, shared target cells, and targets
/// occupied by an agent that ends up staying. Every cancelled attempt
/// counts one collision.
pub(crate) fn resolve_moves(
    width: i32,
    height: i32,
    obstacles: &HashSet<(i32, i32)>,
    positions: &[(i32, i32)],
    actions: &[Action],
) -> MoveOutcome {
    let n = positions.len();
    let mut target: Vec<(i32, i32)> = Vec::with_capacity(n);
    let mut moving: Vec<bool> = Vec::with_capacity(n);
    let mut collisions = 0u64;

    for (pos, action) in positions.iter().zip(actions) {
        let (dx, dy) = action.delta();
        target.push((pos.0 + dx, pos.1 + dy));
        moving.push(*action != Action::Stay);
    }

    // walls and obstacles
    for i in 0..n {
        if !moving[i] {
            continue;
        }
        let (x, y) = target[i];
        if x < 0 || y < 0 || x >= width || y >= height || obstacles.contains(&(x, y)) {
            moving[i] = false;
            target[i] = positions[i];
            collisions += 1;
        }
    }

    // mutual swaps
    for i in 0..n {
        for j in (i + 1)..n {
            if moving[i] && moving[j] && target[i] == positions[j] && target[j] == positions[i] {
                moving[i] = false;
                target[i] = positions[i];
                moving[j] = false;
                target[j] = positions[j];
                collisions += 2;
            }
        }
    }

    // shared targets cancel every contender
    let mut contention: HashMap<(i32, i32), usize> = HashMap::new();
    for i in 0..n {
        if moving[i] {
            *contention.entry(target[i]).or_insert(0) += 1;
        }
    }
    for i in 0..n {
        if moving[i] && contention[&target[i]] > 1 {
            moving[i] = false;
            target[i] = positions[i];
            collisions += 1;
        }
    }

    // targets blocked by agents that end up staying
    loop {
        let mut changed = false;
        for i in 0..n {
            if !moving[i] {
                continue;
            }
            let blocked = (0..n).any(|j| j != i && !moving[j] && target[i] == positions[j]);
            if blocked {
                moving[i] = false;
                target[i] = positions[i];
                collisions += 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    MoveOutcome { positions: target, collisions }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_obstacles() -> HashSet<(i32, i32)> {
        HashSet::new()
    }

    #[test]
    fn boundary_move_is_cancelled() {
        let out = resolve_moves(5, 5, &no_obstacles(), &[(0, 0)], &[Action::Left]);
        assert_eq!(out.positions, vec![(0, 0)]);
        assert_eq!(out.collisions, 1);
    }

    #[test]
    fn swap_is_cancelled_for_both() {
        let out = resolve_moves(
            5,
            5,
            &no_obstacles(),
            &[(1, 1), (2, 1)],
            &[Action::Right, Action::Left],
        );
        assert_eq!(out.positions, vec![(1, 1), (2, 1)]);
        assert_eq!(out.collisions, 2);
    }

    #[test]
    fn contested_cell_cancels_all() {
        let out = resolve_moves(
            5,
            5,
            &no_obstacles(),
            &[(0, 1), (2, 1)],
            &[Action::Right, Action::Left],
        );
        assert_eq!(out.positions, vec![(0, 1), (2, 1)]);
        assert_eq!(out.collisions, 2);
    }

    #[test]
    fn chain_into_stationary_agent_cascades() {
        // agent 2 stays; agent 1 walks into it; agent 0 walks into agent 1
        let out = resolve_moves(
            9,
            1,
            &no_obstacles(),
            &[(0, 0), (1, 0), (2, 0)],
            &[Action::Right, Action::Right, Action::Stay],
        );
        assert_eq!(out.positions, vec![(0, 0), (1, 0), (2, 0)]);
        assert_eq!(out.collisions, 2);
    }

    #[test]
    fn follower_chain_moves_together() {
        // leader steps into free space; follower takes its cell
        let out = resolve_moves(
            9,
            1,
            &no_obstacles(),
            &[(0, 0), (1, 0)],
            &[Action::Right, Action::Right],
        );
        assert_eq!(out.positions, vec![(1, 0), (2, 0)]);
        assert_eq!(out.collisions, 0);
    }

    #[test]
    fn three_cycle_rotation_is_allowed() {
        let out = resolve_moves(
            3,
            3,
            &no_obstacles(),
            &[(0, 0), (1, 0), (1, 1)],
            &[Action::Down, Action::Left, Action::Up],
        );
        assert_eq!(out.positions, vec![(0, 1), (0, 0), (1, 0)]);
        assert_eq!(out.collisions, 0);
    }

    #[test]
    fn obstacle_blocks() {
        let mut obstacles = HashSet::new();
        obstacles.insert((1, 0));
        let out = resolve_moves(3, 1, &obstacles, &[(0, 0)], &[Action::Right]);
        assert_eq!(out.positions, vec![(0, 0)]);
        assert_eq!(out.collisions, 1);
    }
}
