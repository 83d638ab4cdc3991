//! Generalized advantage estimation over one value sequence.

use crate::diffnum::DiffError;

/// Exponentially weighted advantages and value targets for a single
/// trajectory slice.
///
/// `values[t]` estimates the state at step `t`; `bootstrap` estimates the
/// state after the final step and is ignored past a terminal step
/// (`dones[t]` cuts the recursion). Targets are `advantage + value`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    discount_gamma: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), DiffError> {
    let t = rewards.len();
    if values.len() != t || dones.len() != t {
        return Err(DiffError::Shape(format!(
            "gae lengths: rewards {t}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; t];
    let mut targets = vec![0.0; t];
    let mut carry = 0.0;
    for step in (0..t).rev() {
        let (next_value, next_carry) = if dones[step] {
            (0.0, 0.0)
        } else if step + 1 == t {
            (bootstrap, carry)
        } else {
            (values[step + 1], carry)
        };
        let delta = rewards[step] + discount_gamma * next_value - values[step];
        carry = delta + discount_gamma * gae_lambda * next_carry;
        advantages[step] = carry;
        targets[step] = carry + values[step];
    }
    Ok((advantages, targets))
}

/// O(T^2) reference: advantage at `t` is the explicit sum of discounted
/// one-step errors up to the episode boundary. Used to pin down [`gae`].
pub fn gae_bruteforce(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    discount_gamma: f64,
    gae_lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t = rewards.len();
    let delta = |step: usize| -> f64 {
        let next_value = if dones[step] {
            0.0
        } else if step + 1 == t {
            bootstrap
        } else {
            values[step + 1]
        };
        rewards[step] + discount_gamma * next_value - values[step]
    };
    let mut advantages = vec![0.0; t];
    let mut targets = vec![0.0; t];
    for start in 0..t {
        let mut acc = 0.0;
        let mut weight = 1.0;
        for step in start..t {
            acc += weight * delta(step);
            if dones[step] {
                break;
            }
            weight *= discount_gamma * gae_lambda;
        }
        advantages[start] = acc;
        targets[start] = acc + values[start];
    }
    (advantages, targets)
}
