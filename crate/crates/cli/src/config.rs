//! Run configuration: a flat `key = value` text file with `#` comments.
//!
//! Unknown keys are rejected. Omitted keys take documented defaults; grid
//! size and step limit default per task. The resolved configuration can be
//! serialized back out and reloads to an identical effective config.

use anyhow::{anyhow, bail, Context, Result};
use sdhn_core::envs::{Env, FormationConfig, FormationEnv, WarehouseConfig, WarehouseEnv};
use sdhn_core::hypergraph::NoiseKind;
use sdhn_core::marl::TrainConfig;
use sdhn_core::nets::{digest_hex, NetConfig};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

pub const N_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvName {
    Formation,
    Warehouse,
}

impl EnvName {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "formation" => Ok(EnvName::Formation),
            "warehouse" => Ok(EnvName::Warehouse),
            other => bail!("env.name must be formation or warehouse, got {other}"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Formation => "formation",
            EnvName::Warehouse => "warehouse",
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env_name: EnvName,
    pub n_agents: usize,
    pub width: usize,
    pub height: usize,
    pub step_limit: usize,
    pub total_steps: u64,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub seed: u64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub m_hyperedges: usize,
    pub tau: f64,
    pub lambda_sk: f64,
    pub lambda_cb: f64,
    pub skewness_loss_on: bool,
    pub stochastic_edges_on: bool,
    pub plain_mappo: bool,
    pub noise: NoiseKind,
    pub hidden_dim: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut raw: HashMap<String, String> = HashMap::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", line_no + 1))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if raw.insert(key.clone(), value).is_some() {
                bail!("line {}: duplicate key {key}", line_no + 1);
            }
        }
        Self::from_raw(raw)
    }

    fn from_raw(mut raw: HashMap<String, String>) -> Result<RunConfig> {
        fn take<T: std::str::FromStr>(
            raw: &mut HashMap<String, String>,
            key: &str,
            default: T,
        ) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            match raw.remove(key) {
                Some(v) => v.parse::<T>().map_err(|e| anyhow!("key {key}: {e} (value `{v}`)")),
                None => Ok(default),
            }
        }
        fn take_bool(raw: &mut HashMap<String, String>, key: &str, default: bool) -> Result<bool> {
            match raw.remove(key).as_deref() {
                Some("true") => Ok(true),
                Some("false") => Ok(false),
                Some(other) => bail!("key {key}: expected true or false, got `{other}`"),
                None => Ok(default),
            }
        }

        let env_name = match raw.remove("env.name") {
            Some(v) => EnvName::parse(&v)?,
            None => EnvName::Formation,
        };
        let (default_w, default_h, default_limit) = match env_name {
            EnvName::Formation => (7, 7, 100),
            EnvName::Warehouse => (8, 8, 256),
        };
        let n_agents = take(&mut raw, "env.n_agents", 3usize)?;
        let cfg = RunConfig {
            env_name,
            n_agents,
            width: take(&mut raw, "env.width", default_w)?,
            height: take(&mut raw, "env.height", default_h)?,
            step_limit: take(&mut raw, "env.step_limit", default_limit)?,
            total_steps: take(&mut raw, "train.total_steps", 100_000u64)?,
            rollout_len: take(&mut raw, "train.rollout_len", 128usize)?,
            epochs: take(&mut raw, "train.epochs", 4usize)?,
            minibatches: take(&mut raw, "train.minibatches", 2usize)?,
            seed: take(&mut raw, "train.seed", 0u64)?,
            gamma: take(&mut raw, "ppo.gamma", 0.99f64)?,
            lambda: take(&mut raw, "ppo.lambda", 0.95f64)?,
            clip: take(&mut raw, "ppo.clip", 0.2f64)?,
            entropy_coef: take(&mut raw, "ppo.entropy_coef", 0.01f64)?,
            lr_actor: take(&mut raw, "lr.actor", 3e-4f64)?,
            lr_critic: take(&mut raw, "lr.critic", 1e-3f64)?,
            m_hyperedges: take(&mut raw, "sdhn.m_hyperedges", n_agents)?,
            tau: take(&mut raw, "sdhn.tau", 1.0f64)?,
            lambda_sk: take(&mut raw, "sdhn.lambda_sk", -0.6f64)?,
            lambda_cb: take(&mut raw, "sdhn.lambda_cb", 1.0f64)?,
            skewness_loss_on: take_bool(&mut raw, "sdhn.skewness_loss_on", true)?,
            stochastic_edges_on: take_bool(&mut raw, "sdhn.stochastic_edges_on", true)?,
            plain_mappo: take_bool(&mut raw, "sdhn.plain_mappo", false)?,
            noise: match raw.remove("sdhn.noise") {
                Some(v) => NoiseKind::parse(&v)
                    .ok_or_else(|| anyhow!("sdhn.noise must be gumbel or logistic, got `{v}`"))?,
                None => NoiseKind::Gumbel,
            },
            hidden_dim: take(&mut raw, "sdhn.hidden_dim", 64usize)?,
        };

        if let Some(key) = raw.keys().next() {
            bail!("unknown key `{key}`");
        }
        Ok(cfg)
    }

    /// Canonical text form; reparsing yields an identical configuration.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "env.name = {}", self.env_name.as_str());
        let _ = writeln!(out, "env.n_agents = {}", self.n_agents);
        let _ = writeln!(out, "env.width = {}", self.width);
        let _ = writeln!(out, "env.height = {}", self.height);
        let _ = writeln!(out, "env.step_limit = {}", self.step_limit);
        let _ = writeln!(out, "train.total_steps = {}", self.total_steps);
        let _ = writeln!(out, "train.rollout_len = {}", self.rollout_len);
        let _ = writeln!(out, "train.epochs = {}", self.epochs);
        let _ = writeln!(out, "train.minibatches = {}", self.minibatches);
        let _ = writeln!(out, "train.seed = {}", self.seed);
        let _ = writeln!(out, "ppo.gamma = {:?}", self.gamma);
        let _ = writeln!(out, "ppo.lambda = {:?}", self.lambda);
        let _ = writeln!(out, "ppo.clip = {:?}", self.clip);
        let _ = writeln!(out, "ppo.entropy_coef = {:?}", self.entropy_coef);
        let _ = writeln!(out, "lr.actor = {:?}", self.lr_actor);
        let _ = writeln!(out, "lr.critic = {:?}", self.lr_critic);
        let _ = writeln!(out, "sdhn.m_hyperedges = {}", self.m_hyperedges);
        let _ = writeln!(out, "sdhn.tau = {:?}", self.tau);
        let _ = writeln!(out, "sdhn.lambda_sk = {:?}", self.lambda_sk);
        let _ = writeln!(out, "sdhn.lambda_cb = {:?}", self.lambda_cb);
        let _ = writeln!(out, "sdhn.skewness_loss_on = {}", self.skewness_loss_on);
        let _ = writeln!(out, "sdhn.stochastic_edges_on = {}", self.stochastic_edges_on);
        let _ = writeln!(out, "sdhn.plain_mappo = {}", self.plain_mappo);
        let _ = writeln!(out, "sdhn.noise = {}", self.noise.name());
        let _ = writeln!(out, "sdhn.hidden_dim = {}", self.hidden_dim);
        out
    }

    pub fn build_env(&self) -> Result<Box<dyn Env>> {
        let env: Box<dyn Env> = match self.env_name {
            EnvName::Formation => Box::new(FormationEnv::new(FormationConfig {
                width: self.width,
                height: self.height,
                n_agents: self.n_agents,
                step_limit: self.step_limit,
                obstacles: Vec::new(),
                offsets: None,
            })?),
            EnvName::Warehouse => Box::new(WarehouseEnv::new(WarehouseConfig {
                width: self.width,
                height: self.height,
                n_agents: self.n_agents,
                step_limit: self.step_limit,
                ..WarehouseConfig::default()
            })?),
        };
        Ok(env)
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            total_steps: self.total_steps,
            rollout_len: self.rollout_len,
            epochs: self.epochs,
            minibatches: self.minibatches,
            discount_gamma: self.gamma,
            gae_lambda: self.lambda,
            clip_epsilon: self.clip,
            entropy_coef: self.entropy_coef,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
            grad_clip: 10.0,
            target_sync_interval: 1,
            m_hyperedges: self.m_hyperedges,
            tau: self.tau,
            lambda_sk: self.lambda_sk,
            lambda_cb: self.lambda_cb,
            skewness_loss_on: self.skewness_loss_on,
            stochastic_edges_on: self.stochastic_edges_on,
            plain_mappo: self.plain_mappo,
            noise: self.noise,
            hidden_dim: self.hidden_dim,
        }
    }

    /// Network shapes implied by this configuration.
    pub fn net_config(&self) -> Result<NetConfig> {
        let env = self.build_env()?;
        Ok(NetConfig {
            obs_dim: env.obs_dim(),
            global_dim: env.global_dim(),
            hidden_dim: self.hidden_dim,
            n_hyperedges: self.m_hyperedges,
            n_actions: N_ACTIONS,
        })
    }

    /// Digest of everything that shapes the parameter layout and the task,
    /// stamped into checkpoints.
    pub fn digest(&self) -> String {
        let identity = format!(
            "env={};agents={};w={};h={};limit={};hidden={};m={};actions={N_ACTIONS}",
            self.env_name.as_str(),
            self.n_agents,
            self.width,
            self.height,
            self.step_limit,
            self.hidden_dim,
            self.m_hyperedges,
        );
        digest_hex(&identity)
    }
}
