//! Command-line harness for training, evaluation, and ablations with
//! deterministic seeding, flat-file configs, JSONL metrics, and binary
//! checkpoints.

pub mod commands;
pub mod config;
pub mod metrics;

pub use commands::{
    apply_variant, cmd_ablate, cmd_eval, cmd_train, greedy_policy, load_params, run_training,
    ABLATION_VARIANTS,
};
pub use config::{EnvName, RunConfig};
pub use metrics::read_metrics;
