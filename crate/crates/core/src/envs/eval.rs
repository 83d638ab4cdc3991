//! Greedy-policy evaluation over a seeded episode set.

use super::{Action, Env, EnvError};

/// Aggregate evaluation result. Episodes that hit the step limit
/// contribute the limit to the makespan mean and zero to the completion
/// rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub mean_return: f64,
    pub mean_makespan: f64,
    pub completion_rate: f64,
}

/// One step of an evaluated episode, for trace dumps.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub episode: usize,
    pub step: usize,
    pub positions: Vec<(i32, i32)>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub collisions: u64,
    pub deliveries: u64,
    pub completed: bool,
}

/// Run `episodes` seeded episodes; the policy maps (agent index,
/// observation row) to an action index.
pub fn evaluate(
    env: &mut dyn Env,
    episodes: usize,
    seed: u64,
    policy: &mut dyn FnMut(usize, &[f64]) -> usize,
) -> Result<EvalReport, EnvError> {
    evaluate_traced(env, episodes, seed, policy, &mut |_| {})
}

/// Like [`evaluate`], invoking `on_step` after every transition.
pub fn evaluate_traced(
    env: &mut dyn Env,
    episodes: usize,
    seed: u64,
    policy: &mut dyn FnMut(usize, &[f64]) -> usize,
    on_step: &mut dyn FnMut(&TraceRecord),
) -> Result<EvalReport, EnvError> {
    let mut total_return = 0.0;
    let mut total_makespan = 0.0;
    let mut completions = 0usize;
    let n = env.n_agents();
    for episode in 0..episodes {
        let mut frame = env.reset(seed.wrapping_add(episode as u64))?;
        let mut episode_return = 0.0;
        loop {
            let actions: Vec<Action> = (0..n)
                .map(|agent| Action::from_index(policy(agent, frame.obs.row(agent))))
                .collect();
            frame = env.step(&actions)?;
            episode_return += frame.reward;
            on_step(&TraceRecord {
                episode,
                step: frame.info.steps,
                positions: env.positions(),
                actions: actions.iter().map(|a| a.index()).collect(),
                reward: frame.reward,
                collisions: frame.info.collisions,
                deliveries: frame.info.deliveries,
                completed: frame.info.completed,
            });
            if frame.done {
                break;
            }
        }
        total_return += episode_return;
        if frame.info.completed {
            completions += 1;
            total_makespan += frame.info.steps as f64;
        } else {
            total_makespan += env.step_limit() as f64;
        }
    }
    let count = episodes.max(1) as f64;
    Ok(EvalReport {
        mean_return: total_return / count,
        mean_makespan: total_makespan / count,
        completion_rate: completions as f64 / count,
    })
}
