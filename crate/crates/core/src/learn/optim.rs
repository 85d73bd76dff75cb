//! AdamW with decoupled weight decay and a linear-warmup cosine schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// Learning rate reached at the final step, as a fraction of the peak.
    pub final_fraction: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            peak_lr: 2e-4,
            warmup_steps: 50,
            final_fraction: 0.0,
        }
    }
}

impl Schedule {
    /// Learning rate at `step` (0-based) of `total` steps.
    pub fn lr(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1) as f64;
        let t = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let floor = self.peak_lr * self.final_fraction;
        floor + (self.peak_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak_lr must be >= 0, got {}", self.peak_lr)));
        }
        if !(0.0..=1.0).contains(&self.final_fraction) {
            return Err(Error::Config(format!(
                "final_fraction must be in [0, 1], got {}",
                self.final_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(len: usize, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_cosine() {
        let s = Schedule {
            peak_lr: 1.0,
            warmup_steps: 4,
            final_fraction: 0.0,
        };
        assert_eq!(s.lr(0, 14), 0.25);
        assert_eq!(s.lr(3, 14), 1.0);
        assert_eq!(s.lr(4, 14), 1.0);
        assert!((s.lr(9, 14) - 0.5).abs() < 1e-12);
        assert!(s.lr(14, 14).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut opt = AdamW::new(2, 0.01);
        let mut p = [1.0, -2.0];
        opt.step(&mut p, &[0.5, 0.1], 0.0);
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step is lr * sign(g) when eps is negligible
        let mut opt = AdamW::new(1, 0.0);
        let mut p = [0.0];
        opt.step(&mut p, &[3.0], 0.1);
        assert!((p[0] + 0.1).abs() < 1e-8);
    }
}
