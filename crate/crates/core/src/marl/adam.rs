//! Adaptive-moment gradient descent over a subset of a parameter set.

use crate::diffnum::Matrix;
use crate::nets::ParamSet;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First/second moment state for the parameters one optimizer owns.
pub struct Adam {
    lr: f64,
    grad_clip: f64,
    indices: Vec<usize>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    /// `indices` selects which entries of the parameter set this optimizer
    /// updates; gradients outside the subset are ignored.
    pub fn new(params: &ParamSet, indices: Vec<usize>, lr: f64, grad_clip: f64) -> Self {
        let m = indices
            .iter()
            .map(|&i| {
                let e = &params.entries()[i];
                Matrix::zeros(e.value.rows(), e.value.cols())
            })
            .collect();
        let v = indices
            .iter()
            .map(|&i| {
                let e = &params.entries()[i];
                Matrix::zeros(e.value.rows(), e.value.cols())
            })
            .collect();
        Adam { lr, grad_clip, indices, m, v, t: 0 }
    }

    /// Apply one descent step using the gradients currently stored in the
    /// parameter set. Gradients are clipped to a global L2 norm first.
    pub fn step(&mut self, params: &mut ParamSet) {
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let mut norm_sq = 0.0;
        for &i in &self.indices {
            norm_sq +=
                params.entries()[i].grad.data().iter().map(|g| g * g).sum::<f64>();
        }
        let norm = norm_sq.sqrt();
        let scale = if norm > self.grad_clip { self.grad_clip / norm } else { 1.0 };

        let bias1 = 1.0 - BETA1.powi(self.t as i32);
        let bias2 = 1.0 - BETA2.powi(self.t as i32);
        for (slot, &i) in self.indices.iter().enumerate() {
            let entry = &mut params.entries_mut()[i];
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            for (idx, value) in entry.value.data_mut().iter_mut().enumerate() {
                let g = entry.grad.data()[idx] * scale;
                m[idx] = BETA1 * m[idx] + (1.0 - BETA1) * g;
                v[idx] = BETA2 * v[idx] + (1.0 - BETA2) * g * g;
                let m_hat = m[idx] / bias1;
                let v_hat = v[idx] / bias2;
                *value -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}
