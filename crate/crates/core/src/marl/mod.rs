//! Centralized-training / decentralized-execution loop: rollouts, GAE,
//! the clipped policy objective, the joint value/skewness critic loss,
//! target-critic maintenance, and optimization.

mod adam;
mod gae;
mod loss;
mod rollout;
mod trainer;

pub use adam::Adam;
pub use gae::{gae, gae_bruteforce};
pub use loss::{actor_loss, critic_loss, deterministic_incidence, total_critic_loss};
pub use rollout::{RolloutBatch, RolloutStats, StepRecord};
pub use trainer::{sync_target, train, TrainOutcome, Trainer, UpdateStats};

use crate::diffnum::DiffError;
use crate::envs::EnvError;
use crate::hypergraph::NoiseKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("training diverged at update {update}: {detail}")]
    Diverged { update: u64, detail: String },
    #[error("metrics sink error: {0}")]
    Sink(String),
}

/// Every knob of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    /// Total environment steps; rounded down to whole rollouts.
    pub total_steps: u64,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub discount_gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub grad_clip: f64,
    pub target_sync_interval: u64,
    pub m_hyperedges: usize,
    pub tau: f64,
    pub lambda_sk: f64,
    pub lambda_cb: f64,
    pub skewness_loss_on: bool,
    pub stochastic_edges_on: bool,
    /// Baseline mode: bypass the generator and convolution stack; the
    /// critic reads [encoded obs || embedded global state].
    pub plain_mappo: bool,
    pub noise: NoiseKind,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            total_steps: 0,
            rollout_len: 128,
            epochs: 4,
            minibatches: 2,
            discount_gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coef: 0.01,
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            grad_clip: 10.0,
            target_sync_interval: 1,
            m_hyperedges: 0, // 0 means "match the agent count"
            tau: 1.0,
            lambda_sk: -0.6,
            lambda_cb: 1.0,
            skewness_loss_on: true,
            stochastic_edges_on: true,
            plain_mappo: false,
            noise: NoiseKind::Gumbel,
            hidden_dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..1.0).contains(&self.discount_gamma) {
            return Err(TrainError::Config(format!(
                "discount_gamma must be in [0, 1), got {}",
                self.discount_gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(TrainError::Config(format!(
                "gae_lambda must be in [0, 1], got {}",
                self.gae_lambda
            )));
        }
        if self.clip_epsilon <= 0.0 {
            return Err(TrainError::Config(format!(
                "clip_epsilon must be positive, got {}",
                self.clip_epsilon
            )));
        }
        if self.tau <= 0.0 {
            return Err(TrainError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.m_hyperedges < 1 {
            return Err(TrainError::Config("m_hyperedges must be at least 1".into()));
        }
        if self.rollout_len < 1 {
            return Err(TrainError::Config("rollout_len must be at least 1".into()));
        }
        if self.epochs < 1 || self.minibatches < 1 {
            return Err(TrainError::Config("epochs and minibatches must be at least 1".into()));
        }
        if self.target_sync_interval < 1 {
            return Err(TrainError::Config("target_sync_interval must be at least 1".into()));
        }
        if self.hidden_dim < 1 {
            return Err(TrainError::Config("hidden_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of training telemetry, emitted per update. The wall-clock
/// field is measured, not derived from the seed, so it is excluded from
/// the deterministic metrics serialization and logged separately.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update: u64,
    pub env_steps: u64,
    pub mean_episode_return: f64,
    pub mean_makespan: f64,
    pub completion_rate: f64,
    pub loss_actor: f64,
    pub loss_td: f64,
    pub loss_sk: f64,
    pub sk_hard: f64,
    pub sk_relaxed: f64,
    pub mean_p: f64,
    pub frac_p_below_half: f64,
    pub entropy: f64,
    #[serde(skip)]
    pub wall_clock_s: f64,
}
