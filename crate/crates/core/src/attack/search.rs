//! Bisection over the distance-loss weight λ.

use serde::{Deserialize, Serialize};

/// Bracket state. A successful attack at λ moves the lower bound up (heavier
/// distance penalty next time); a failure moves the upper bound down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarySearchState {
    pub lambda: f64,
    pub lo: f64,
    pub hi: f64,
    pub step_j: usize,
    pub total_steps: usize,
}

impl BinarySearchState {
    pub fn new(lo: f64, hi: f64, total_steps: usize) -> Self {
        Self {
            lambda: (lo + hi) / 2.0,
            lo,
            hi,
            step_j: 0,
            total_steps,
        }
    }

    pub fn is_done(&self) -> bool {
        self.step_j >= self.total_steps
    }

    /// Records the outcome at the current λ and moves to the next midpoint.
    pub fn update(&mut self, success: bool) {
        if success {
            self.lo = self.lambda;
        } else {
            self.hi = self.lambda;
        }
        self.lambda = (self.lo + self.hi) / 2.0;
        self.step_j += 1;
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}
