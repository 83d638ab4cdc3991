//! Centralized-training loop: collect a rollout with the target critic,
//! estimate advantages, then alternate clipped-objective ascent for the
//! actor with joint value/skewness descent for the critic.

use super::adam::Adam;
use super::gae::gae;
use super::loss::{build_actor_loss, build_critic_loss, deterministic_incidence};
use super::rollout::{RolloutBatch, RolloutStats, StepRecord};
use super::{MetricsRecord, TrainConfig, TrainError};
use crate::diffnum::Matrix;
use crate::envs::{Action, Env, EnvFrame};
use crate::hypergraph::{
    harden, noise_from_uniform, relaxed_sample, skewness, HyperedgeProbMatrix, Incidence,
};
use crate::nets::{
    actor_forward_batch, critic_forward, encode_obs, generator_forward, hgcn_forward, init_params,
    GeneratorState, InitScheme, NetConfig, ParamSet, TapeBinding,
};
use crate::diffnum::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::VecDeque;
use std::time::Instant;

const EPISODE_WINDOW: usize = 20;

/// Hard-copy the critic-side parameters (everything except the actor)
/// into the target set every `interval` updates.
pub fn sync_target(params: &ParamSet, target: &mut ParamSet, interval: u64, update_index: u64) {
    if interval == 0 || update_index % interval != 0 {
        return;
    }
    for &i in &params.critic_side_indices() {
        let value = params.entries()[i].value.clone();
        target.entries_mut()[i].value = value;
    }
}

#[derive(Debug, Clone, Copy)]
struct EpisodeStat {
    episode_return: f64,
    makespan: f64,
    completed: bool,
}

/// Values of the minimized losses averaged over one update's passes.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub loss_actor: f64,
    pub loss_td: f64,
    pub loss_sk: f64,
}

/// Outcome of a finished (or aborted) training run.
pub struct TrainOutcome {
    pub params: ParamSet,
    pub updates: u64,
    pub env_steps: u64,
}

pub struct Trainer {
    cfg: TrainConfig,
    env: Box<dyn Env>,
    params: ParamSet,
    target: ParamSet,
    actor_opt: Adam,
    critic_opt: Adam,
    gen_state: GeneratorState,
    frame: EnvFrame,
    action_rng: ChaCha12Rng,
    noise_rng: ChaCha12Rng,
    env_seed_rng: ChaCha12Rng,
    shuffle_rng: ChaCha12Rng,
    episode_return: f64,
    recent_episodes: VecDeque<EpisodeStat>,
    env_steps: u64,
    updates_done: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

impl Trainer {
    pub fn new(cfg: TrainConfig, mut env: Box<dyn Env>) -> Result<Self, TrainError> {
        let mut cfg = cfg;
        if cfg.m_hyperedges == 0 {
            cfg.m_hyperedges = env.n_agents();
        }
        cfg.validate()?;
        let net_cfg = NetConfig {
            obs_dim: env.obs_dim(),
            global_dim: env.global_dim(),
            hidden_dim: cfg.hidden_dim,
            n_hyperedges: cfg.m_hyperedges,
            n_actions: env.n_actions(),
        };
        let params = init_params(&net_cfg, cfg.seed, InitScheme::XavierUniform);
        let target = params.clone();
        let actor_opt = Adam::new(&params, params.actor_indices(), cfg.lr_actor, cfg.grad_clip);
        let critic_opt =
            Adam::new(&params, params.critic_side_indices(), cfg.lr_critic, cfg.grad_clip);
        let mut env_seed_rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, 3));
        let frame = env.reset(env_seed_rng.gen())?;
        let gen_state = GeneratorState::zeros(env.n_agents(), cfg.hidden_dim);
        Ok(Trainer {
            action_rng: ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, 1)),
            noise_rng: ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, 2)),
            shuffle_rng: ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, 4)),
            env,
            params,
            target,
            actor_opt,
            critic_opt,
            gen_state,
            frame,
            env_seed_rng,
            episode_return: 0.0,
            recent_episodes: VecDeque::new(),
            env_steps: 0,
            updates_done: 0,
            cfg,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Critic-pipeline values for one frame with the given parameters.
    /// Returns per-agent values, the advanced generator state, and the
    /// collection artifacts (probabilities, relaxed sample, incidence).
    #[allow(clippy::type_complexity)]
    fn pipeline_values(
        &mut self,
        use_target: bool,
        obs: &Matrix,
        global: &Matrix,
        gen_state: &GeneratorState,
    ) -> Result<
        (Vec<f64>, GeneratorState, Option<(HyperedgeProbMatrix, Matrix, Incidence, Option<Matrix>)>),
        TrainError,
    > {
        let params = if use_target { &self.target } else { &self.params };
        let features = encode_obs(params, obs)?;
        if self.cfg.plain_mappo {
            let values = critic_forward(params, global, &features)?;
            return Ok((values, gen_state.clone(), None));
        }
        let (p, new_state) = generator_forward(params, obs, gen_state)?;
        let (y, incidence, noise) = if self.cfg.stochastic_edges_on {
            let mut u = Matrix::zeros(p.n_agents(), p.n_hyperedges());
            for v in u.data_mut() {
                *v = self.noise_rng.gen::<f64>();
            }
            let eps = noise_from_uniform(self.cfg.noise, &u)?;
            let relaxed = relaxed_sample(&p, &eps, self.cfg.tau)?;
            let incidence = harden(&relaxed);
            (relaxed.y, incidence, Some(eps))
        } else {
            let h = deterministic_incidence(p.p());
            (p.p().clone(), Incidence::from_binary(h), None)
        };
        let messages = hgcn_forward(params, &incidence, &features)?;
        let values = critic_forward(params, global, &messages)?;
        Ok((values, new_state, Some((p, y, incidence, noise))))
    }

    /// Roll the environment forward `rollout_len` steps with the current
    /// actor and the target critic.
    pub fn collect_rollout(&mut self) -> Result<RolloutBatch, TrainError> {
        let n = self.env.n_agents();
        let t_len = self.cfg.rollout_len;
        let mut steps = Vec::with_capacity(t_len);
        let mut entropy_sum = 0.0;
        let mut mean_p_sum = 0.0;
        let mut frac_below_sum = 0.0;
        let mut sk_hard_sum = 0.0;
        let mut sk_relaxed_sum = 0.0;
        let mut hg_steps = 0usize;

        for _ in 0..t_len {
            let obs = self.frame.obs.clone();
            let global = self.frame.global_state.clone();

            let probs = actor_forward_batch(&self.params, &obs)?;
            let mut actions = Vec::with_capacity(n);
            let mut logp = Vec::with_capacity(n);
            for agent in 0..n {
                let row = probs.row(agent);
                entropy_sum += -row
                    .iter()
                    .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
                    .sum::<f64>();
                let draw: f64 = self.action_rng.gen();
                let mut acc = 0.0;
                let mut chosen = row.len() - 1;
                for (a, &p) in row.iter().enumerate() {
                    acc += p;
                    if draw < acc {
                        chosen = a;
                        break;
                    }
                }
                actions.push(chosen);
                logp.push(row[chosen].max(crate::nets::EPS_LOGPROB).ln());
            }

            let gen_state_before = self.gen_state.clone();
            let (values, new_state, artifacts) =
                self.pipeline_values(true, &obs, &global, &gen_state_before)?;
            let noise = match &artifacts {
                Some((p, y, incidence, noise)) => {
                    mean_p_sum += p.p().data().iter().sum::<f64>() / p.p().len() as f64;
                    frac_below_sum += p.p().data().iter().filter(|v| **v < 0.5).count() as f64
                        / p.p().len() as f64;
                    sk_hard_sum += skewness(&incidence.b);
                    let mut relaxed_degrees = vec![0.0; y.cols()];
                    for r in 0..y.rows() {
                        for (c, acc) in relaxed_degrees.iter_mut().enumerate() {
                            *acc += y.get(r, c);
                        }
                    }
                    sk_relaxed_sum += skewness(&relaxed_degrees);
                    hg_steps += 1;
                    noise.clone()
                }
                None => None,
            };

            let env_actions: Vec<Action> =
                actions.iter().map(|&a| Action::from_index(a)).collect();
            let next = self.env.step(&env_actions).map_err(TrainError::Env)?;
            self.env_steps += 1;
            self.episode_return += next.reward;

            steps.push(StepRecord {
                obs,
                global_state: global,
                actions,
                logp_old: logp,
                reward: next.reward,
                done: next.done,
                values,
                gen_state: gen_state_before,
                noise,
            });

            if next.done {
                let makespan = if next.info.completed {
                    next.info.steps as f64
                } else {
                    self.env.step_limit() as f64
                };
                self.recent_episodes.push_back(EpisodeStat {
                    episode_return: self.episode_return,
                    makespan,
                    completed: next.info.completed,
                });
                while self.recent_episodes.len() > EPISODE_WINDOW {
                    self.recent_episodes.pop_front();
                }
                self.episode_return = 0.0;
                self.frame = self.env.reset(self.env_seed_rng.gen()).map_err(TrainError::Env)?;
                self.gen_state = GeneratorState::zeros(n, self.cfg.hidden_dim);
            } else {
                self.frame = next;
                self.gen_state = new_state;
            }
        }

        let obs = self.frame.obs.clone();
        let global = self.frame.global_state.clone();
        let gen_state = self.gen_state.clone();
        let (bootstrap_values, _, _) = self.pipeline_values(true, &obs, &global, &gen_state)?;

        let denom = (t_len * n) as f64;
        let hg_denom = hg_steps.max(1) as f64;
        Ok(RolloutBatch {
            steps,
            bootstrap_values,
            stats: RolloutStats {
                mean_entropy: entropy_sum / denom,
                mean_p: mean_p_sum / hg_denom,
                frac_p_below_half: frac_below_sum / hg_denom,
                sk_hard: sk_hard_sum / hg_denom,
                sk_relaxed: sk_relaxed_sum / hg_denom,
            },
        })
    }

    /// Per-(step, agent) advantages (normalized) and value targets.
    pub fn prepare_batch(
        &self,
        batch: &RolloutBatch,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), TrainError> {
        let t_len = batch.len();
        let n = batch.n_agents();
        let rewards: Vec<f64> = batch.steps.iter().map(|s| s.reward).collect();
        let dones: Vec<bool> = batch.steps.iter().map(|s| s.done).collect();
        let mut advantages = vec![vec![0.0; n]; t_len];
        let mut targets = vec![vec![0.0; n]; t_len];
        for agent in 0..n {
            let values: Vec<f64> = batch.steps.iter().map(|s| s.values[agent]).collect();
            let (adv, tgt) = gae(
                &rewards,
                &values,
                &dones,
                batch.bootstrap_values[agent],
                self.cfg.discount_gamma,
                self.cfg.gae_lambda,
            )?;
            for t in 0..t_len {
                advantages[t][agent] = adv[t];
                targets[t][agent] = tgt[t];
            }
        }
        // normalize advantages over the whole batch
        let count = (t_len * n) as f64;
        let mean: f64 = advantages.iter().flatten().sum::<f64>() / count;
        let var: f64 =
            advantages.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / count;
        let std = var.sqrt() + 1e-8;
        for row in &mut advantages {
            for a in row {
                *a = (*a - mean) / std;
            }
        }
        Ok((advantages, targets))
    }

    /// One optimization phase over a collected rollout.
    pub fn update(&mut self, batch: &RolloutBatch) -> Result<UpdateStats, TrainError> {
        let (advantages, targets) = self.prepare_batch(batch)?;
        let t_len = batch.len();
        let mut indices: Vec<usize> = (0..t_len).collect();
        let chunks = self.cfg.minibatches.min(t_len).max(1);
        let mut stats = UpdateStats::default();
        let mut passes = 0.0;

        for _ in 0..self.cfg.epochs {
            // Fisher-Yates shuffle of step order
            for i in (1..indices.len()).rev() {
                let j = self.shuffle_rng.gen_range(0..=i);
                indices.swap(i, j);
            }
            let chunk_size = t_len.div_ceil(chunks);
            for chunk in indices.chunks(chunk_size) {
                let actor_values = {
                    let mut tape = Tape::new();
                    let mut binding = TapeBinding::new(&self.params);
                    let (loss, values) = build_actor_loss(
                        &mut tape,
                        &mut binding,
                        batch,
                        chunk,
                        &advantages,
                        self.cfg.clip_epsilon,
                        self.cfg.entropy_coef,
                    )?;
                    let grads = tape.backward(loss)?;
                    let collected: Vec<(usize, Matrix)> =
                        binding.bound().map(|(i, var)| (i, grads.wrt(var))).collect();
                    drop(binding);
                    self.params.zero_grads();
                    for (i, g) in collected {
                        self.params.entries_mut()[i].grad = g;
                    }
                    self.actor_opt.step(&mut self.params);
                    values
                };

                let critic_values = {
                    let mut tape = Tape::new();
                    let mut binding = TapeBinding::new(&self.params);
                    let (loss, values) = build_critic_loss(
                        &mut tape,
                        &mut binding,
                        batch,
                        chunk,
                        &targets,
                        &self.cfg,
                    )?;
                    let grads = tape.backward(loss)?;
                    let collected: Vec<(usize, Matrix)> =
                        binding.bound().map(|(i, var)| (i, grads.wrt(var))).collect();
                    drop(binding);
                    self.params.zero_grads();
                    for (i, g) in collected {
                        self.params.entries_mut()[i].grad = g;
                    }
                    self.critic_opt.step(&mut self.params);
                    values
                };

                stats.loss_actor += -actor_values.objective;
                stats.loss_td += critic_values.l_td;
                stats.loss_sk += critic_values.l_sk;
                passes += 1.0;
            }
        }

        stats.loss_actor /= passes;
        stats.loss_td /= passes;
        stats.loss_sk /= passes;
        self.updates_done += 1;
        sync_target(&self.params, &mut self.target, self.cfg.target_sync_interval, self.updates_done);

        if !(stats.loss_actor.is_finite() && stats.loss_td.is_finite() && stats.loss_sk.is_finite())
        {
            return Err(TrainError::Diverged {
                update: self.updates_done,
                detail: format!(
                    "losses actor={} td={} sk={}",
                    stats.loss_actor, stats.loss_td, stats.loss_sk
                ),
            });
        }
        if self.params.entries().iter().any(|e| !e.value.all_finite()) {
            return Err(TrainError::Diverged {
                update: self.updates_done,
                detail: "parameters left the finite range".into(),
            });
        }
        Ok(stats)
    }

    /// Gradient of the joint critic loss over a whole batch at the current
    /// parameters, without applying an update. Returns (name, gradient)
    /// for every parameter.
    pub fn critic_gradients(
        &mut self,
        batch: &RolloutBatch,
    ) -> Result<Vec<(String, Matrix)>, TrainError> {
        let (_, targets) = self.prepare_batch(batch)?;
        let indices: Vec<usize> = (0..batch.len()).collect();
        let mut tape = Tape::new();
        let mut binding = TapeBinding::new(&self.params);
        let (loss, _) =
            build_critic_loss(&mut tape, &mut binding, batch, &indices, &targets, &self.cfg)?;
        let grads = tape.backward(loss)?;
        let mut by_index: Vec<Option<Matrix>> = vec![None; self.params.entries().len()];
        for (i, var) in binding.bound() {
            by_index[i] = Some(grads.wrt(var));
        }
        drop(binding);
        Ok(self
            .params
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let g = by_index[i]
                    .take()
                    .unwrap_or_else(|| Matrix::zeros(e.value.rows(), e.value.cols()));
                (e.name.clone(), g)
            })
            .collect())
    }

    fn metrics(&self, update: u64, stats: &UpdateStats, rollout: &RolloutStats, wall: f64) -> MetricsRecord {
        let window = &self.recent_episodes;
        let (mean_return, mean_makespan, completion) = if window.is_empty() {
            (0.0, self.env.step_limit() as f64, 0.0)
        } else {
            let count = window.len() as f64;
            (
                window.iter().map(|e| e.episode_return).sum::<f64>() / count,
                window.iter().map(|e| e.makespan).sum::<f64>() / count,
                window.iter().filter(|e| e.completed).count() as f64 / count,
            )
        };
        MetricsRecord {
            update,
            env_steps: self.env_steps,
            mean_episode_return: mean_return,
            mean_makespan,
            completion_rate: completion,
            loss_actor: stats.loss_actor,
            loss_td: stats.loss_td,
            loss_sk: stats.loss_sk,
            sk_hard: rollout.sk_hard,
            sk_relaxed: rollout.sk_relaxed,
            mean_p: rollout.mean_p,
            frac_p_below_half: rollout.frac_p_below_half,
            entropy: rollout.mean_entropy,
            wall_clock_s: wall,
        }
    }

    /// Full training loop; `on_update` receives one metrics record per
    /// update together with the current parameters.
    pub fn run<F>(&mut self, mut on_update: F) -> Result<TrainOutcome, TrainError>
    where
        F: FnMut(&MetricsRecord, &ParamSet) -> std::io::Result<()>,
    {
        let n_updates = self.cfg.total_steps / self.cfg.rollout_len as u64;
        for update in 1..=n_updates {
            let started = Instant::now();
            let batch = self.collect_rollout()?;
            let stats = self.update(&batch)?;
            let record =
                self.metrics(update, &stats, &batch.stats, started.elapsed().as_secs_f64());
            on_update(&record, &self.params).map_err(|e| TrainError::Sink(e.to_string()))?;
        }
        Ok(TrainOutcome {
            params: self.params.clone(),
            updates: n_updates,
            env_steps: self.env_steps,
        })
    }
}

/// Build a trainer from an environment factory and run it to completion.
pub fn train<F, G>(
    cfg: &TrainConfig,
    env_factory: G,
    on_update: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&MetricsRecord, &ParamSet) -> std::io::Result<()>,
    G: FnOnce() -> Box<dyn Env>,
{
    let mut trainer = Trainer::new(cfg.clone(), env_factory())?;
    trainer.run(on_update)
}
