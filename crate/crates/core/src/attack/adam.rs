//! Adam with a per-sample learning rate that is rescaled on a fixed period
//! according to whether the attack currently succeeds.

use serde::{Deserialize, Serialize};

/// First/second moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, gamma: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1,
            beta2,
            gamma,
            step: 0,
        }
    }

    /// Advances one step and writes the additive update `-η·m̂/(√v̂ + γ)`.
    pub fn step(&mut self, grad: &[f64], eta: f64, update: &mut [f64]) {
        assert_eq!(grad.len(), self.m.len(), "gradient length");
        assert_eq!(update.len(), self.m.len(), "update length");
        self.step += 1;
        let i = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(i);
        let c2 = 1.0 - b2.powi(i);
        for (((m, v), &g), u) in self.m.iter_mut().zip(&mut self.v).zip(grad).zip(update) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *u = -eta * m_hat / (v_hat.sqrt() + self.gamma);
        }
    }
}

/// Value-semantics form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, grad: &[f64], eta: f64) -> (AdamState, Vec<f64>) {
    let mut next = state.clone();
    let mut update = vec![0.0; grad.len()];
    next.step(grad, eta, &mut update);
    (next, update)
}

/// Per-sample learning rate and its scaling schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleLrState {
    pub eta: f64,
    /// Factor applied on success, in (0, 1).
    pub a: f64,
    /// Factor applied on failure, above 1.
    pub b: f64,
    pub n_interval: usize,
}

/// On iterations that are multiples of `n_interval`, scales η by `a` when the
/// sample is currently adversarial and by `b` otherwise.
pub fn lr_adjust(lr: SampleLrState, success: bool, iteration: usize) -> SampleLrState {
    if lr.n_interval == 0 || iteration % lr.n_interval != 0 {
        return lr;
    }
    let factor = if success { lr.a } else { lr.b };
    SampleLrState {
        eta: lr.eta * factor,
        ..lr
    }
}
