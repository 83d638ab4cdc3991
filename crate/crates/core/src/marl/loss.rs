//! Tape builders for the clipped policy objective and the joint
//! value/skewness critic loss.

use super::rollout::RolloutBatch;
use super::TrainConfig;
use crate::diffnum::{DiffError, Matrix, Tape, Var};
use crate::hypergraph::{
    hgcn_layer_tape, relaxed_sample_tape, relaxed_skewness_tape, skewness_loss_tape,
};
use crate::nets::{
    actor_forward_tape, critic_forward_tape, encode_obs_tape, generator_forward_tape, ParamSet,
    TapeBinding, EPS_LOGPROB, HGCN_LAYERS,
};

/// Values of the minimized pieces, for logging.
#[derive(Debug, Clone, Copy)]
pub struct ActorLossValues {
    /// The maximized clipped objective (excluding the entropy bonus).
    pub objective: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CriticLossValues {
    pub l_td: f64,
    pub l_sk: f64,
}

/// Stack the actor recomputation for the chosen steps and return the
/// variable to minimize: -(mean clipped objective + entropy bonus).
pub(crate) fn build_actor_loss(
    tape: &mut Tape,
    binding: &mut TapeBinding,
    batch: &RolloutBatch,
    step_indices: &[usize],
    advantages: &[Vec<f64>],
    clip_epsilon: f64,
    entropy_coef: f64,
) -> Result<(Var, ActorLossValues), DiffError> {
    let n_agents = batch.n_agents();
    let obs_dim = batch.steps[0].obs.cols();
    let rows = step_indices.len() * n_agents;

    let mut obs_data = Vec::with_capacity(rows * obs_dim);
    let mut actions = Vec::with_capacity(rows);
    let mut logp_old = Vec::with_capacity(rows);
    let mut adv = Vec::with_capacity(rows);
    for &t in step_indices {
        let step = &batch.steps[t];
        obs_data.extend_from_slice(step.obs.data());
        actions.extend_from_slice(&step.actions);
        logp_old.extend_from_slice(&step.logp_old);
        adv.extend_from_slice(&advantages[t]);
    }

    let obs = tape.leaf(Matrix::from_vec(rows, obs_dim, obs_data)?);
    let log_probs = actor_forward_tape(tape, binding, obs)?;
    let sampled = tape.gather_cols(log_probs, &actions)?;
    let sampled = tape.clamp(sampled, EPS_LOGPROB.ln(), 0.0);

    let old = tape.leaf(Matrix::col_vector(&logp_old));
    let diff = tape.sub(sampled, old)?;
    let ratio = tape.exp(diff);
    if !tape.value(ratio).all_finite() {
        return Err(DiffError::NonFinite("probability ratio diverged".into()));
    }

    let adv_leaf = tape.leaf(Matrix::col_vector(&adv));
    let unclipped = tape.mul(ratio, adv_leaf)?;
    let clipped_ratio = tape.clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    let clipped = tape.mul(clipped_ratio, adv_leaf)?;
    let per_sample = tape.min(unclipped, clipped)?;
    let objective = tape.mean_all(per_sample)?;

    let probs = tape.exp(log_probs);
    let plogp = tape.mul(probs, log_probs)?;
    let row_entropy = tape.reduce(
        crate::diffnum::ReduceOp::Sum,
        plogp,
        crate::diffnum::Axis::Cols,
    )?;
    let row_entropy = tape.negate(row_entropy);
    let entropy = tape.mean_all(row_entropy)?;

    let values = ActorLossValues { objective: tape.value(objective).scalar()? };

    let bonus = tape.scale(entropy, entropy_coef);
    let maximized = tape.add(objective, bonus)?;
    let loss = tape.negate(maximized);
    Ok((loss, values))
}

/// Rebuild the critic pipeline for the chosen steps (with stored noise and
/// generator states) and return the variable to minimize:
/// mean squared value error plus the weighted skewness loss.
pub(crate) fn build_critic_loss(
    tape: &mut Tape,
    binding: &mut TapeBinding,
    batch: &RolloutBatch,
    step_indices: &[usize],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(Var, CriticLossValues), DiffError> {
    let n_agents = batch.n_agents();
    let mut sq_err_sum: Option<Var> = None;
    let mut sk_dev_sum: Option<Var> = None;

    for &t in step_indices {
        let step = &batch.steps[t];
        let obs = tape.leaf(step.obs.clone());
        let global = tape.leaf(step.global_state.clone());
        let features = encode_obs_tape(tape, binding, obs)?;

        let messages = if cfg.plain_mappo {
            features
        } else {
            let (p, _) = generator_forward_tape(tape, binding, obs, &step.gen_state)?;
            let y = if cfg.stochastic_edges_on {
                let noise = step.noise.as_ref().ok_or_else(|| {
                    DiffError::Shape("stochastic step is missing its noise record".into())
                })?;
                relaxed_sample_tape(tape, p, noise, cfg.tau)?
            } else {
                p
            };
            let h = tape.straight_through_ge_half(y);
            let mut x = features;
            for layer in 0..HGCN_LAYERS {
                let theta = binding.var(tape, &format!("hgcn.l{layer}.w"));
                x = hgcn_layer_tape(tape, h, x, theta)?;
            }
            if cfg.skewness_loss_on {
                let sk = relaxed_skewness_tape(tape, y)?;
                let dev = skewness_loss_tape(tape, sk, cfg.lambda_sk)?;
                sk_dev_sum = Some(match sk_dev_sum {
                    Some(acc) => tape.add(acc, dev)?,
                    None => dev,
                });
            }
            x
        };

        let values = critic_forward_tape(tape, binding, messages, global)?;
        let target = tape.leaf(Matrix::col_vector(&targets[t]));
        let err = tape.sub(values, target)?;
        let sq = tape.square(err);
        let total = tape.sum_all(sq)?;
        sq_err_sum = Some(match sq_err_sum {
            Some(acc) => tape.add(acc, total)?,
            None => total,
        });
    }

    let denom = (step_indices.len() * n_agents) as f64;
    let l_td = tape.scale(sq_err_sum.expect("at least one step"), 1.0 / denom);
    let l_td_value = tape.value(l_td).scalar()?;

    let (loss, l_sk_value) = match sk_dev_sum {
        Some(acc) => {
            let l_sk = tape.scale(acc, 1.0 / step_indices.len() as f64);
            let l_sk_value = tape.value(l_sk).scalar()?;
            let weighted = tape.scale(l_sk, cfg.lambda_cb);
            (tape.add(l_td, weighted)?, l_sk_value)
        }
        None => (l_td, 0.0),
    };

    Ok((loss, CriticLossValues { l_td: l_td_value, l_sk: l_sk_value }))
}

/// The maximized clipped objective over a whole batch (entropy excluded),
/// with advantages supplied per (step, agent).
pub fn actor_loss(
    params: &ParamSet,
    batch: &RolloutBatch,
    advantages: &[Vec<f64>],
    clip_epsilon: f64,
) -> Result<f64, DiffError> {
    let mut tape = Tape::new();
    let mut binding = TapeBinding::new(params);
    let indices: Vec<usize> = (0..batch.len()).collect();
    let (_, values) =
        build_actor_loss(&mut tape, &mut binding, batch, &indices, advantages, clip_epsilon, 0.0)?;
    Ok(values.objective)
}

/// Mean squared error between live-critic values and fixed targets over a
/// whole batch.
pub fn critic_loss(
    params: &ParamSet,
    batch: &RolloutBatch,
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<f64, DiffError> {
    let mut tape = Tape::new();
    let mut binding = TapeBinding::new(params);
    let indices: Vec<usize> = (0..batch.len()).collect();
    let (_, values) = build_critic_loss(&mut tape, &mut binding, batch, &indices, targets, cfg)?;
    Ok(values.l_td)
}

/// Joint critic loss: TD term plus the weighted skewness term.
pub fn total_critic_loss(l_td: f64, l_sk: f64, lambda_cb: f64) -> f64 {
    l_td + lambda_cb * l_sk
}

/// Deterministic-threshold incidence used when stochastic edges are
/// disabled: probabilities at or above one half join the hyperedge.
pub fn deterministic_incidence(p: &Matrix) -> Matrix {
    p.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}
