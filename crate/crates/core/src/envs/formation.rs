//! Formation-keeping task: agents start on the left of the grid and must
//! assemble a target formation with its centroid on a goal anchor to the
//! right.
//!
//! Per-agent observation layout (length 2N + 3):
//! `[own_x, own_y, (dx, dy) to each other agent in index order,
//!   (dx, dy) to the goal centroid, formation_matched]`
//!
//! Global state layout (length 2WH + 4):
//! `[agent occupancy grid, obstacle grid, goal_cx, goal_cy,
//!   formation_matched, steps / step_limit]`
//!
//! Reward per step: -0.01 step cost, +0.1 while the formation offsets
//! match (translation-invariant), +1.0 per unit decrease of the centroid
//! Manhattan distance to the goal centroid, +5.0 on completion (formation
//! matched with its centroid on the goal).

use super::{resolve_moves, Action, Env, EnvError, EnvFrame, StepInfo};
use crate::diffnum::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashSet;

const STEP_COST: f64 = -0.01;
const MATCH_BONUS: f64 = 0.1;
const PROGRESS_WEIGHT: f64 = 1.0;
const COMPLETION_BONUS: f64 = 5.0;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone)]
pub struct FormationConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub step_limit: usize,
    pub obstacles: Vec<(i32, i32)>,
    /// Target formation as offsets from an anchor cell; `None` means a
    /// vertical line centered on the anchor.
    pub offsets: Option<Vec<(i32, i32)>>,
}

impl Default for FormationConfig {
    fn default() -> Self {
        FormationConfig {
            width: 7,
            height: 7,
            n_agents: 3,
            step_limit: 100,
            obstacles: Vec::new(),
            offsets: None,
        }
    }
}

impl FormationConfig {
    fn resolved_offsets(&self) -> Vec<(i32, i32)> {
        match &self.offsets {
            Some(v) => v.clone(),
            None => {
                let n = self.n_agents as i32;
                (0..n).map(|k| (0, k - (n - 1) / 2)).collect()
            }
        }
    }
}

pub struct FormationEnv {
    cfg: FormationConfig,
    offsets: Vec<(i32, i32)>,
    obstacles: HashSet<(i32, i32)>,
    positions: Vec<(i32, i32)>,
    /// Cells the formation must occupy: anchor + offset for each agent.
    targets: Vec<(i32, i32)>,
    goal_centroid: (f64, f64),
    prev_goal_dist: f64,
    steps: usize,
    done: bool,
    info: StepInfo,
}

impl FormationEnv {
    pub fn new(cfg: FormationConfig) -> Result<Self, EnvError> {
        if cfg.n_agents < 2 {
            return Err(EnvError::Config("formation task needs at least 2 agents".into()));
        }
        if cfg.width < 5 || cfg.height < 5 {
            return Err(EnvError::Config("grid must be at least 5x5".into()));
        }
        let offsets = cfg.resolved_offsets();
        if offsets.len() != cfg.n_agents {
            return Err(EnvError::Config(format!(
                "{} offsets for {} agents",
                offsets.len(),
                cfg.n_agents
            )));
        }
        let obstacles: HashSet<(i32, i32)> = cfg.obstacles.iter().copied().collect();
        Ok(FormationEnv {
            offsets,
            obstacles,
            positions: Vec::new(),
            targets: Vec::new(),
            goal_centroid: (0.0, 0.0),
            prev_goal_dist: 0.0,
            steps: 0,
            done: true,
            info: StepInfo::default(),
            cfg,
        })
    }

    /// Explicit layout, mainly for tests: agent cells and the goal anchor.
    pub fn with_layout(
        cfg: FormationConfig,
        agent_positions: Vec<(i32, i32)>,
        goal_anchor: (i32, i32),
    ) -> Result<(Self, EnvFrame), EnvError> {
        let mut env = FormationEnv::new(cfg)?;
        if agent_positions.len() != env.cfg.n_agents {
            return Err(EnvError::Config("position count does not match agent count".into()));
        }
        env.install(agent_positions, goal_anchor)?;
        let frame = env.frame(0.0);
        Ok((env, frame))
    }

    fn install(
        &mut self,
        positions: Vec<(i32, i32)>,
        goal_anchor: (i32, i32),
    ) -> Result<(), EnvError> {
        let distinct: HashSet<_> = positions.iter().copied().collect();
        if distinct.len() != positions.len() {
            return Err(EnvError::Config("agent cells must be distinct".into()));
        }
        for &(x, y) in &positions {
            if !self.in_bounds(x, y) || self.obstacles.contains(&(x, y)) {
                return Err(EnvError::Config(format!("cell ({x}, {y}) is not free")));
            }
        }
        let targets: Vec<(i32, i32)> =
            self.offsets.iter().map(|&(dx, dy)| (goal_anchor.0 + dx, goal_anchor.1 + dy)).collect();
        for &(x, y) in &targets {
            if !self.in_bounds(x, y) || self.obstacles.contains(&(x, y)) {
                return Err(EnvError::Config(format!("formation target ({x}, {y}) is not free")));
            }
        }
        let n = targets.len() as f64;
        self.goal_centroid = (
            targets.iter().map(|p| p.0 as f64).sum::<f64>() / n,
            targets.iter().map(|p| p.1 as f64).sum::<f64>() / n,
        );
        self.positions = positions;
        self.targets = targets;
        self.steps = 0;
        self.done = false;
        self.info = StepInfo { formation_matched: self.formation_matched(), ..StepInfo::default() };
        self.prev_goal_dist = self.goal_dist();
        Ok(())
    }

    fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.cfg.width as i32 && y < self.cfg.height as i32
    }

    fn centroid(&self) -> (f64, f64) {
        let n = self.positions.len() as f64;
        (
            self.positions.iter().map(|p| p.0 as f64).sum::<f64>() / n,
            self.positions.iter().map(|p| p.1 as f64).sum::<f64>() / n,
        )
    }

    fn goal_dist(&self) -> f64 {
        let (cx, cy) = self.centroid();
        (cx - self.goal_centroid.0).abs() + (cy - self.goal_centroid.1).abs()
    }

    /// Translation-invariant multiset match between current cells and the
    /// formation offsets.
    fn formation_matched(&self) -> bool {
        let mut pos = self.positions.clone();
        let mut off = self.offsets.clone();
        pos.sort_unstable();
        off.sort_unstable();
        let t = (pos[0].0 - off[0].0, pos[0].1 - off[0].1);
        pos.iter().zip(&off).all(|(p, o)| p.0 - o.0 == t.0 && p.1 - o.1 == t.1)
    }

    fn frame(&self, reward: f64) -> EnvFrame {
        let n = self.cfg.n_agents;
        let obs_dim = self.obs_dim();
        let mut obs = Matrix::zeros(n, obs_dim);
        let matched = if self.info.formation_matched { 1.0 } else { 0.0 };
        for i in 0..n {
            let (xi, yi) = (self.positions[i].0 as f64, self.positions[i].1 as f64);
            let mut row = vec![xi, yi];
            for (j, &(xj, yj)) in self.positions.iter().enumerate() {
                if j != i {
                    row.push(xj as f64 - xi);
                    row.push(yj as f64 - yi);
                }
            }
            row.push(self.goal_centroid.0 - xi);
            row.push(self.goal_centroid.1 - yi);
            row.push(matched);
            for (c, v) in row.into_iter().enumerate() {
                obs.set(i, c, v);
            }
        }

        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut global = vec![0.0; self.global_dim()];
        for &(x, y) in &self.positions {
            global[y as usize * w + x as usize] = 1.0;
        }
        for &(x, y) in &self.obstacles {
            global[w * h + y as usize * w + x as usize] = 1.0;
        }
        let tail = 2 * w * h;
        global[tail] = self.goal_centroid.0;
        global[tail + 1] = self.goal_centroid.1;
        global[tail + 2] = matched;
        global[tail + 3] = self.steps as f64 / self.cfg.step_limit as f64;

        EnvFrame {
            obs,
            global_state: Matrix::from_vec(1, self.global_dim(), global).expect("global layout"),
            reward,
            done: self.done,
            info: self.info,
        }
    }
}

impl Env for FormationEnv {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn obs_dim(&self) -> usize {
        2 * self.cfg.n_agents + 3
    }

    fn global_dim(&self) -> usize {
        2 * self.cfg.width * self.cfg.height + 4
    }

    fn step_limit(&self) -> usize {
        self.cfg.step_limit
    }

    fn reset(&mut self, seed: u64) -> Result<EnvFrame, EnvError> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (w, h) = (self.cfg.width as i32, self.cfg.height as i32);

        // valid anchors keep every formation cell in the right region's bounds
        let mut anchors = Vec::new();
        for x in (w / 2)..w {
            for y in 0..h {
                let ok = self.offsets.iter().all(|&(dx, dy)| {
                    let (tx, ty) = (x + dx, y + dy);
                    self.in_bounds(tx, ty) && !self.obstacles.contains(&(tx, ty))
                });
                if ok {
                    anchors.push((x, y));
                }
            }
        }
        if anchors.is_empty() {
            return Err(EnvError::Config("no feasible goal anchor on the right region".into()));
        }

        let mut left_cells = Vec::new();
        for x in 0..(w / 2) {
            for y in 0..h {
                if !self.obstacles.contains(&(x, y)) {
                    left_cells.push((x, y));
                }
            }
        }
        if left_cells.len() < self.cfg.n_agents {
            return Err(EnvError::Config(format!(
                "{} agents cannot be placed on {} free left-region cells",
                self.cfg.n_agents,
                left_cells.len()
            )));
        }

        for _ in 0..PLACEMENT_ATTEMPTS {
            let anchor = anchors[rng.gen_range(0..anchors.len())];
            let mut cells = left_cells.clone();
            // partial Fisher-Yates for the first n_agents cells
            for i in 0..self.cfg.n_agents {
                let j = rng.gen_range(i..cells.len());
                cells.swap(i, j);
            }
            let positions: Vec<(i32, i32)> = cells[..self.cfg.n_agents].to_vec();
            if self.install(positions, anchor).is_ok() {
                return Ok(self.frame(0.0));
            }
        }
        Err(EnvError::Config("no satisfiable placement after 1000 seeded attempts".into()))
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

        let matched = self.formation_matched();
        let dist = self.goal_dist();
        let completed = matched && dist < 1e-9;
        let mut reward = STEP_COST + PROGRESS_WEIGHT * (self.prev_goal_dist - dist);
        if matched {
            reward += MATCH_BONUS;
        }
        if completed {
            reward += COMPLETION_BONUS;
        }
        self.prev_goal_dist = dist;
        self.done = completed || self.steps >= self.cfg.step_limit;
        self.info = StepInfo {
            collisions: self.info.collisions + outcome.collisions,
            deliveries: 0,
            formation_matched: matched,
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

    fn small() -> FormationConfig {
        FormationConfig::default()
    }

    #[test]
    fn same_seed_same_layout() {
        let mut a = FormationEnv::new(small()).unwrap();
        let mut b = FormationEnv::new(small()).unwrap();
        let fa = a.reset(42).unwrap();
        let fb = b.reset(42).unwrap();
        assert_eq!(a.positions(), b.positions());
        assert_eq!(fa.obs, fb.obs);
        assert_eq!(fa.global_state, fb.global_state);
        let fc = a.reset(43).unwrap();
        assert_ne!(fc.global_state, fb.global_state);
    }

    #[test]
    fn too_many_agents_is_config_error() {
        let cfg = FormationConfig { n_agents: 50, ..small() };
        let mut env = FormationEnv::new(cfg).unwrap();
        assert!(matches!(env.reset(1), Err(EnvError::Config(_))));
    }

    #[test]
    fn vertical_pair_formation_is_valid() {
        let cfg = FormationConfig {
            n_agents: 2,
            offsets: Some(vec![(0, 0), (0, 1)]),
            ..small()
        };
        let (env, _) =
            FormationEnv::with_layout(cfg, vec![(1, 1), (1, 2)], (5, 3)).unwrap();
        assert!(env.formation_matched());
    }

    #[test]
    fn all_stay_reward_is_step_cost() {
        // a deliberately unmatched layout far from the goal
        let (mut env, _) = FormationEnv::with_layout(
            small(),
            vec![(0, 0), (2, 2), (1, 4)],
            (5, 3),
        )
        .unwrap();
        let frame = env.step(&[Action::Stay; 3]).unwrap();
        assert!((frame.reward - STEP_COST).abs() < 1e-12);
    }

    #[test]
    fn all_stay_episode_return_accumulates_step_cost() {
        let (mut env, _) = FormationEnv::with_layout(
            small(),
            vec![(0, 0), (2, 2), (1, 4)],
            (5, 3),
        )
        .unwrap();
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let frame = env.step(&[Action::Stay; 3]).unwrap();
            total += frame.reward;
            steps += 1;
            if frame.done {
                break;
            }
        }
        assert_eq!(steps, 100);
        assert!((total - STEP_COST * steps as f64).abs() < 1e-12);
    }

    #[test]
    fn boundary_bump_counts_collision() {
        let (mut env, _) = FormationEnv::with_layout(
            small(),
            vec![(0, 0), (2, 2), (1, 4)],
            (5, 3),
        )
        .unwrap();
        let frame = env.step(&[Action::Left, Action::Stay, Action::Stay]).unwrap();
        assert_eq!(env.positions()[0], (0, 0));
        assert_eq!(frame.info.collisions, 1);
    }

    #[test]
    fn completion_pays_bonus_and_ends_episode() {
        // agents one step left of the target formation at anchor (4, 3)
        let (mut env, _) = FormationEnv::with_layout(
            small(),
            vec![(3, 2), (3, 3), (3, 4)],
            (4, 3),
        )
        .unwrap();
        let frame = env.step(&[Action::Right; 3]).unwrap();
        assert!(frame.info.completed);
        assert!(frame.done);
        // -0.01 + 0.1 (matched) + 1.0 (one unit of progress) + 5.0
        assert!((frame.reward - (STEP_COST + MATCH_BONUS + 1.0 + COMPLETION_BONUS)).abs() < 1e-9);
    }

    #[test]
    fn step_after_done_is_error() {
        let (mut env, _) = FormationEnv::with_layout(
            small(),
            vec![(3, 2), (3, 3), (3, 4)],
            (4, 3),
        )
        .unwrap();
        env.step(&[Action::Right; 3]).unwrap();
        assert!(matches!(env.step(&[Action::Stay; 3]), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn observations_translate_consistently() {
        let big = FormationConfig { width: 15, height: 15, ..small() };
        let (env_a, fa) = FormationEnv::with_layout(
            big.clone(),
            vec![(1, 1), (2, 3), (3, 5)],
            (9, 6),
        )
        .unwrap();
        let (env_b, fb) = FormationEnv::with_layout(
            big,
            vec![(3, 2), (4, 4), (5, 6)],
            (11, 7),
        )
        .unwrap();
        drop(env_a);
        drop(env_b);
        let (dx, dy) = (2.0, 1.0);
        for agent in 0..3 {
            let ra = fa.obs.row(agent);
            let rb = fb.obs.row(agent);
            assert_eq!(rb[0], ra[0] + dx);
            assert_eq!(rb[1], ra[1] + dy);
            for c in 2..ra.len() {
                assert_eq!(rb[c], ra[c], "egocentric feature {c} changed under translation");
            }
        }
    }

    #[test]
    fn deterministic_under_action_sequence() {
        let actions = [
            [Action::Right, Action::Up, Action::Stay],
            [Action::Right, Action::Right, Action::Down],
            [Action::Up, Action::Left, Action::Right],
        ];
        let run = || {
            let mut env = FormationEnv::new(small()).unwrap();
            env.reset(7).unwrap();
            let mut frames = Vec::new();
            for acts in &actions {
                frames.push(env.step(acts).unwrap());
            }
            frames
        };
        let a = run();
        let b = run();
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.obs, fb.obs);
            assert_eq!(fa.reward, fb.reward);
            assert_eq!(fa.info, fb.info);
        }
    }

    #[test]
    fn agents_never_overlap() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha12Rng::seed_from_u64(1234);
        let mut env = FormationEnv::new(small()).unwrap();
        for episode in 0..5 {
            env.reset(episode).unwrap();
            loop {
                let actions: Vec<Action> =
                    (0..3).map(|_| Action::from_index(rng.gen_range(0..5))).collect();
                let frame = env.step(&actions).unwrap();
                let distinct: HashSet<_> = env.positions().into_iter().collect();
                assert_eq!(distinct.len(), 3);
                if frame.done {
                    break;
                }
            }
        }
    }
}
