//! SGD with Nesterov momentum.
//!
//! Lookahead formulation, applied per step with the learning rate supplied
//! by the caller (the trainer owns the schedule):
//!
//! ```text
//! v ← m·v + g
//! p ← p − lr·(g + m·v)
//! ```
//!
//! With m = 0 this reduces to plain SGD.

use serde::{Deserialize, Serialize};

use crate::error::{CvpError, Result};

/// Per-parameter velocity buffers plus the momentum coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdNesterov {
    momentum: f64,
    velocity: Vec<Vec<f64>>,
    steps: u64,
}

impl SgdNesterov {
    /// Velocity buffers are allocated to match `shapes` (flat lengths, in
    /// canonical parameter order).
    pub fn new(momentum: f64, shapes: &[usize]) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) || !momentum.is_finite() {
            return Err(CvpError::config(format!(
                "momentum must be in [0,1), got {momentum}"
            )));
        }
        Ok(SgdNesterov {
            momentum,
            velocity: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub(crate) fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Rebuild from checkpointed buffers.
    pub(crate) fn from_parts(momentum: f64, velocity: Vec<Vec<f64>>, steps: u64) -> Self {
        SgdNesterov { momentum, velocity, steps }
    }

    /// One update over all parameter tensors, in the same canonical order
    /// the state was allocated with.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(CvpError::shape(format!(
                "optimizer state covers {} tensors, got {} params / {} grads",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        let m = self.momentum;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            if p.len() != v.len() || g.len() != v.len() {
                return Err(CvpError::shape(format!(
                    "parameter/gradient length {} / {} does not match velocity {}",
                    p.len(),
                    g.len(),
                    v.len()
                )));
            }
            for i in 0..v.len() {
                v[i] = m * v[i] + g[i];
                p[i] -= lr * (g[i] + m * v[i]);
            }
        }
        self.steps += 1;
        Ok(())
    }
}
