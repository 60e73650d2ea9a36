use serde::{Deserialize, Serialize};

use super::params::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

/// Scales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParameterSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Applied { grad_norm: f64, clipped: bool },
    /// The gradient contained a NaN or infinity; parameters were left alone.
    Skipped,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: ParameterSet,
    v: ParameterSet,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &ParameterSet {
        &self.m
    }

    pub fn second_moment(&self) -> &ParameterSet {
        &self.v
    }

    /// Clips `grads`, then applies one bias-corrected update at `lr`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &mut ParameterSet, lr: f64) -> StepOutcome {
        if !grads.is_finite() {
            log::warn!("skipping optimizer step {}: non-finite gradient", self.t + 1);
            return StepOutcome::Skipped;
        }
        let (grad_norm, clipped) = match self.config.clip_norm {
            Some(max) => {
                let n = clip_global_norm(grads, max);
                (n, n > max)
            }
            None => (grads.global_norm(), false),
        };
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.arrays_mut().zip(grads.arrays()).zip(self.m.arrays_mut()).zip(self.v.arrays_mut()) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        StepOutcome::Applied { grad_norm, clipped }
    }
}
