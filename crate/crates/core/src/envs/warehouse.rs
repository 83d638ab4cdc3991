//! Warehouse delivery task: agents fetch requested shelves and bring them
//! to a station. `Stay` on the active shelf's cell toggles carrying; a
//! carried requested shelf delivers on arrival at the station, then the
//! next request activates.
//!
//! Per-agent observation layout (length 14):
//! `[3x3 blocking occupancy window (row-major, self excluded), own_x,
//!   own_y, carrying, active_shelf_x, active_shelf_y]`
//!
//! Global state layout (length 2WH + 5 + N):
//! `[agent occupancy grid, shelf-at-origin grid, station_x, station_y,
//!   active_shelf_x, active_shelf_y, remaining_requests, carry flag per
//!   agent]`
//!
//! Reward per step: -0.005 step cost, +1.0 per delivery. The episode
//! completes when the request queue is exhausted.

use super::{resolve_moves, Action, Env, EnvError, EnvFrame, StepInfo};
use crate::diffnum::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::{HashSet, VecDeque};

const STEP_COST: f64 = -0.005;
const DELIVERY_REWARD: f64 = 1.0;
const OBS_DIM: usize = 14;

#[derive(Debug, Clone)]
pub struct WarehouseConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub step_limit: usize,
    pub n_shelves: usize,
    pub n_requests: usize,
    pub obstacles: Vec<(i32, i32)>,
}

impl Default for WarehouseConfig {
    fn default() -> Self {
        WarehouseConfig {
            width: 8,
            height: 8,
            n_agents: 3,
            step_limit: 256,
            n_shelves: 4,
            n_requests: 2,
            obstacles: Vec::new(),
        }
    }
}

pub struct WarehouseEnv {
    cfg: WarehouseConfig,
    obstacles: HashSet<(i32, i32)>,
    positions: Vec<(i32, i32)>,
    shelf_origin: Vec<(i32, i32)>,
    shelf_at_origin: Vec<bool>,
    station: (i32, i32),
    /// Shelf index carried per agent.
    carrying: Vec<Option<usize>>,
    active_request: Option<usize>,
    queue: VecDeque<usize>,
    steps: usize,
    done: bool,
    info: StepInfo,
}

impl WarehouseEnv {
    pub fn new(cfg: WarehouseConfig) -> Result<Self, EnvError> {
        if cfg.n_agents < 1 {
            return Err(EnvError::Config("warehouse task needs at least 1 agent".into()));
        }
        if cfg.n_shelves < 1 {
            return Err(EnvError::Config("warehouse task needs at least 1 shelf".into()));
        }
        if cfg.n_requests < 1 {
            return Err(EnvError::Config("request queue length must be at least 1".into()));
        }
        if cfg.width < 4 || cfg.height < 4 {
            return Err(EnvError::Config("grid must be at least 4x4".into()));
        }
        let obstacles: HashSet<(i32, i32)> = cfg.obstacles.iter().copied().collect();
        Ok(WarehouseEnv {
            obstacles,
            positions: Vec::new(),
            shelf_origin: Vec::new(),
            shelf_at_origin: Vec::new(),
            station: (0, 0),
            carrying: Vec::new(),
            active_request: None,
            queue: VecDeque::new(),
            steps: 0,
            done: true,
            info: StepInfo::default(),
            cfg,
        })
    }

    /// Explicit layout, mainly for tests.
    #[allow(clippy::too_many_arguments)]
    pub fn with_layout(
        cfg: WarehouseConfig,
        agent_positions: Vec<(i32, i32)>,
        shelves: Vec<(i32, i32)>,
        station: (i32, i32),
        requests: Vec<usize>,
    ) -> Result<(Self, EnvFrame), EnvError> {
        let mut env = WarehouseEnv::new(cfg)?;
        env.install(agent_positions, shelves, station, requests)?;
        let frame = env.frame(0.0);
        Ok((env, frame))
    }

    fn install(
        &mut self,
        positions: Vec<(i32, i32)>,
        shelves: Vec<(i32, i32)>,
        station: (i32, i32),
        requests: Vec<usize>,
    ) -> Result<(), EnvError> {
        if positions.len() != self.cfg.n_agents {
            return Err(EnvError::Config("position count does not match agent count".into()));
        }
        if shelves.len() != self.cfg.n_shelves {
            return Err(EnvError::Config("shelf count does not match configuration".into()));
        }
        if requests.is_empty() {
            return Err(EnvError::Config("request queue is empty".into()));
        }
        let distinct: HashSet<_> = positions.iter().copied().collect();
        if distinct.len() != positions.len() {
            return Err(EnvError::Config("agent cells must be distinct".into()));
        }
        let shelf_set: HashSet<_> = shelves.iter().copied().collect();
        if shelf_set.len() != shelves.len() || shelf_set.contains(&station) {
            return Err(EnvError::Config("shelves and station must occupy distinct cells".into()));
        }
        for cell in positions.iter().chain(shelves.iter()).chain(std::iter::once(&station)) {
            if !self.in_bounds(cell.0, cell.1) || self.obstacles.contains(cell) {
                return Err(EnvError::Config(format!("cell {cell:?} is not free")));
            }
        }
        if let Some(bad) = requests.iter().find(|r| **r >= shelves.len()) {
            return Err(EnvError::Config(format!("request names unknown shelf {bad}")));
        }
        self.shelf_at_origin = vec![true; shelves.len()];
        self.positions = positions;
        self.shelf_origin = shelves;
        self.station = station;
        self.carrying = vec![None; self.cfg.n_agents];
        let mut queue: VecDeque<usize> = requests.into();
        self.active_request = queue.pop_front();
        self.queue = queue;
        self.steps = 0;
        self.done = false;
        self.info = StepInfo::default();
        Ok(())
    }

    fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.cfg.width as i32 && y < self.cfg.height as i32
    }

    fn frame(&self, reward: f64) -> EnvFrame {
        let n = self.cfg.n_agents;
        let mut obs = Matrix::zeros(n, OBS_DIM);
        let active_cell = self.active_request.map(|s| self.shelf_origin[s]).unwrap_or((-1, -1));
        for i in 0..n {
            let (xi, yi) = self.positions[i];
            let mut row = Vec::with_capacity(OBS_DIM);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (x, y) = (xi + dx, yi + dy);
                    let blocked = !self.in_bounds(x, y)
                        || self.obstacles.contains(&(x, y))
                        || self.positions.iter().enumerate().any(|(j, p)| j != i && *p == (x, y));
                    row.push(if blocked { 1.0 } else { 0.0 });
                }
            }
            row.push(xi as f64);
            row.push(yi as f64);
            row.push(if self.carrying[i].is_some() { 1.0 } else { 0.0 });
            row.push(active_cell.0 as f64);
            row.push(active_cell.1 as f64);
            for (c, v) in row.into_iter().enumerate() {
                obs.set(i, c, v);
            }
        }

        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut global = vec![0.0; self.global_dim()];
        for &(x, y) in &self.positions {
            global[y as usize * w + x as usize] = 1.0;
        }
        for (s, &(x, y)) in self.shelf_origin.iter().enumerate() {
            if self.shelf_at_origin[s] {
                global[w * h + y as usize * w + x as usize] = 1.0;
            }
        }
        let tail = 2 * w * h;
        global[tail] = self.station.0 as f64;
        global[tail + 1] = self.station.1 as f64;
        global[tail + 2] = active_cell.0 as f64;
        global[tail + 3] = active_cell.1 as f64;
        global[tail + 4] =
            self.queue.len() as f64 + if self.active_request.is_some() { 1.0 } else { 0.0 };
        for (i, c) in self.carrying.iter().enumerate() {
            global[tail + 5 + i] = if c.is_some() { 1.0 } else { 0.0 };
        }

        EnvFrame {
            obs,
            global_state: Matrix::from_vec(1, self.global_dim(), global).expect("global layout"),
            reward,
            done: self.done,
            info: self.info,
        }
    }
}

impl Env for WarehouseEnv {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn global_dim(&self) -> usize {
        2 * self.cfg.width * self.cfg.height + 5 + self.cfg.n_agents
    }

    fn step_limit(&self) -> usize {
        self.cfg.step_limit
    }

    fn reset(&mut self, seed: u64) -> Result<EnvFrame, EnvError> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (w, h) = (self.cfg.width as i32, self.cfg.height as i32);
        let mut free: Vec<(i32, i32)> = Vec::new();
        for x in 0..w {
            for y in 0..h {
                if !self.obstacles.contains(&(x, y)) {
                    free.push((x, y));
                }
            }
        }
        let needed = self.cfg.n_shelves + 1;
        if free.len() < needed.max(self.cfg.n_agents) {
            return Err(EnvError::Config("not enough free cells for the layout".into()));
        }
        // shelves + station from one draw without replacement
        let mut cells = free.clone();
        for i in 0..needed {
            let j = rng.gen_range(i..cells.len());
            cells.swap(i, j);
        }
        let shelves: Vec<(i32, i32)> = cells[..self.cfg.n_shelves].to_vec();
        let station = cells[self.cfg.n_shelves];
        // agents anywhere free (shelf cells are walkable floor), distinct
        let mut agent_cells = free;
        for i in 0..self.cfg.n_agents {
            let j = rng.gen_range(i..agent_cells.len());
            agent_cells.swap(i, j);
        }
        let positions: Vec<(i32, i32)> = agent_cells[..self.cfg.n_agents].to_vec();
        let requests: Vec<usize> =
            (0..self.cfg.n_requests).map(|_| rng.gen_range(0..self.cfg.n_shelves)).collect();
        self.install(positions, shelves, station, requests)?;
        Ok(self.frame(0.0))
    }

    fn step(&mut self, actions: &[Action]) -> Result<EnvFrame, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        if actions.len() != self.cfg.n_agents {
            return Err(EnvError::ActionCount { expected: self.cfg.n_agents, got: actions.len() });
        }
        let outcome = resolve_moves(
            self.cfg.width as i32,
            self.cfg.height as i32,
            &self.obstacles,
            &self.positions,
            actions,
        );
        self.positions = outcome.positions;
        self.steps += 1;

        // deliveries on arrival
        let mut delivered_now = 0u64;
        for i in 0..self.cfg.n_agents {
            if let (Some(shelf), Some(active)) = (self.carrying[i], self.active_request) {
                if shelf == active && self.positions[i] == self.station {
                    self.carrying[i] = None;
                    self.shelf_at_origin[shelf] = true;
                    self.active_request = self.queue.pop_front();
                    delivered_now += 1;
                }
            }
        }

        // stay toggles carry state
        for i in 0..self.cfg.n_agents {
            if actions[i] != Action::Stay {
                continue;
            }
            match self.carrying[i] {
                Some(shelf) => {
                    self.carrying[i] = None;
                    self.shelf_at_origin[shelf] = true;
                }
                None => {
                    if let Some(active) = self.active_request {
                        if self.shelf_at_origin[active]
                            && self.positions[i] == self.shelf_origin[active]
                        {
                            self.carrying[i] = Some(active);
                            self.shelf_at_origin[active] = false;
                        }
                    }
                }
            }
        }

        let completed = self.active_request.is_none();
        let reward = STEP_COST + DELIVERY_REWARD * delivered_now as f64;
        self.done = completed || self.steps >= self.cfg.step_limit;
        self.info = StepInfo {
            collisions: self.info.collisions + outcome.collisions,
            deliveries: self.info.deliveries + delivered_now,
            formation_matched: false,
            steps: self.steps,
            completed,
        };
        Ok(self.frame(reward))
    }

    fn positions(&self) -> Vec<(i32, i32)> {
        self.positions.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> (WarehouseEnv, EnvFrame) {
        // shelf 0 at (2,0), shelf 1 at (5,5); station at (4,0)
        WarehouseEnv::with_layout(
            WarehouseConfig::default(),
            vec![(1, 0), (6, 6), (0, 7)],
            vec![(2, 0), (5, 5), (1, 4), (6, 2)],
            (4, 0),
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn no_delivery_reward_is_step_cost() {
        let (mut env, _) = layout();
        let frame = env.step(&[Action::Up, Action::Stay, Action::Stay]).unwrap();
        assert!((frame.reward - STEP_COST).abs() < 1e-12);
    }

    #[test]
    fn pickup_carry_deliver_sequence() {
        let (mut env, _) = layout();
        // agent 0 walks to shelf 0 at (2,0), toggles pickup, carries to station (4,0)
        env.step(&[Action::Right, Action::Stay, Action::Stay]).unwrap(); // (2,0)
        let f = env.step(&[Action::Stay, Action::Stay, Action::Stay]).unwrap(); // pickup
        assert_eq!(f.obs.get(0, 11), 1.0, "carry flag should be set");
        env.step(&[Action::Right, Action::Stay, Action::Stay]).unwrap(); // (3,0)
        let f = env.step(&[Action::Right, Action::Stay, Action::Stay]).unwrap(); // (4,0) deliver
        assert!((f.reward - (STEP_COST + DELIVERY_REWARD)).abs() < 1e-12);
        assert_eq!(f.info.deliveries, 1);
        assert!(!f.done, "second request still pending");
    }

    #[test]
    fn completing_all_requests_ends_episode() {
        let (mut env, _) = WarehouseEnv::with_layout(
            WarehouseConfig { n_requests: 1, ..WarehouseConfig::default() },
            vec![(1, 0), (6, 6), (0, 7)],
            vec![(2, 0), (5, 5), (1, 4), (6, 2)],
            (4, 0),
            vec![0],
        )
        .unwrap();
        env.step(&[Action::Right, Action::Stay, Action::Stay]).unwrap();
        env.step(&[Action::Stay, Action::Stay, Action::Stay]).unwrap();
        env.step(&[Action::Right, Action::Stay, Action::Stay]).unwrap();
        let f = env.step(&[Action::Right, Action::Stay, Action::Stay]).unwrap();
        assert!(f.info.completed);
        assert!(f.done);
    }

    #[test]
    fn drop_returns_shelf_to_origin() {
        let (mut env, _) = layout();
        env.step(&[Action::Right, Action::Stay, Action::Stay]).unwrap();
        env.step(&[Action::Stay, Action::Stay, Action::Stay]).unwrap(); // pickup
        env.step(&[Action::Right, Action::Stay, Action::Stay]).unwrap();
        let f = env.step(&[Action::Stay, Action::Stay, Action::Stay]).unwrap(); // drop
        assert_eq!(f.obs.get(0, 11), 0.0);
        // shelf can be picked up again at its origin
        env.step(&[Action::Left, Action::Stay, Action::Stay]).unwrap();
        let f = env.step(&[Action::Stay, Action::Stay, Action::Stay]).unwrap();
        assert_eq!(f.obs.get(0, 11), 1.0);
    }

    #[test]
    fn only_requested_shelf_can_be_picked() {
        let (mut env, _) = WarehouseEnv::with_layout(
            WarehouseConfig::default(),
            vec![(1, 4), (6, 6), (0, 7)], // agent 0 already on shelf 2's cell
            vec![(2, 0), (5, 5), (1, 4), (6, 2)],
            (4, 0),
            vec![0, 1],
        )
        .unwrap();
        let f = env.step(&[Action::Stay, Action::Stay, Action::Stay]).unwrap();
        assert_eq!(f.obs.get(0, 11), 0.0, "non-requested shelf must not be carried");
    }

    #[test]
    fn same_seed_same_requests_and_layout() {
        let mut a = WarehouseEnv::new(WarehouseConfig::default()).unwrap();
        let mut b = WarehouseEnv::new(WarehouseConfig::default()).unwrap();
        let fa = a.reset(9).unwrap();
        let fb = b.reset(9).unwrap();
        assert_eq!(fa.global_state, fb.global_state);
        assert_eq!(a.queue, b.queue);
        assert_eq!(a.active_request, b.active_request);
    }

    #[test]
    fn observation_window_flags_neighbor_agents() {
        let (env, frame) = WarehouseEnv::with_layout(
            WarehouseConfig::default(),
            vec![(3, 3), (4, 3), (0, 0)],
            vec![(2, 0), (5, 5), (1, 4), (6, 2)],
            (4, 0),
            vec![0],
        )
        .unwrap();
        drop(env);
        // agent 0's window: the cell to its right (dx=1, dy=0) is index 5
        assert_eq!(frame.obs.get(0, 5), 1.0);
        // its own cell (dx=0, dy=0) is index 4 and reads free
        assert_eq!(frame.obs.get(0, 4), 0.0);
    }

    #[test]
    fn observations_translate_consistently() {
        let big = WarehouseConfig { width: 16, height: 16, ..WarehouseConfig::default() };
        let (_, fa) = WarehouseEnv::with_layout(
            big.clone(),
            vec![(2, 2), (5, 4), (3, 7)],
            vec![(4, 2), (8, 8), (2, 5), (9, 3)],
            (6, 6),
            vec![0, 1],
        )
        .unwrap();
        let (_, fb) = WarehouseEnv::with_layout(
            big,
            vec![(5, 3), (8, 5), (6, 8)],
            vec![(7, 3), (11, 9), (5, 6), (12, 4)],
            (9, 7),
            vec![0, 1],
        )
        .unwrap();
        let (dx, dy) = (3.0, 1.0);
        for agent in 0..3 {
            let ra = fa.obs.row(agent);
            let rb = fb.obs.row(agent);
            for c in 0..9 {
                assert_eq!(rb[c], ra[c], "window cell {c} changed under translation");
            }
            assert_eq!(rb[9], ra[9] + dx);
            assert_eq!(rb[10], ra[10] + dy);
            assert_eq!(rb[11], ra[11]);
            assert_eq!(rb[12], ra[12] + dx);
            assert_eq!(rb[13], ra[13] + dy);
        }
    }
}
