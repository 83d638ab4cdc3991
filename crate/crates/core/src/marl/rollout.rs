//! Trajectory storage for one update window.

use crate::diffnum::Matrix;
use crate::nets::GeneratorState;

/// One environment transition plus everything needed to rebuild both the
/// actor and critic forward passes at training time.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Per-agent observations (N x F_obs) at the start of the step.
    pub obs: Matrix,
    /// Global state (1 x S) at the start of the step.
    pub global_state: Matrix,
    /// Sampled action index per agent.
    pub actions: Vec<usize>,
    /// Log-probability of each sampled action at collection parameters.
    pub logp_old: Vec<f64>,
    /// Shared reward received.
    pub reward: f64,
    /// Episode ended at this step (goal reached or step limit).
    pub done: bool,
    /// Per-agent values from the target critic at collection time.
    pub values: Vec<f64>,
    /// Generator hidden state entering this step.
    pub gen_state: GeneratorState,
    /// Sampling noise used for the hyperedge draw (absent when edges are
    /// deterministic or the hypergraph path is bypassed).
    pub noise: Option<Matrix>,
}

/// Collection-time statistics of one rollout, used for metrics.
#[derive(Debug, Clone, Copy, Default)]
pub struct RolloutStats {
    pub mean_entropy: f64,
    pub mean_p: f64,
    pub frac_p_below_half: f64,
    pub sk_hard: f64,
    pub sk_relaxed: f64,
}

/// A fixed-length rollout with bootstrap values for the state after the
/// final step.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub steps: Vec<StepRecord>,
    /// Per-agent value estimates past the window end (target critic).
    pub bootstrap_values: Vec<f64>,
    pub stats: RolloutStats,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.bootstrap_values.len()
    }
}
