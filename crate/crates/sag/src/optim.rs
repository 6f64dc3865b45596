//! Adam with warm-up and the two decay shapes the training stages use.

use serde::{Deserialize, Serialize};

/// Shape of the learning-rate curve after warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    /// Hold the peak rate.
    Constant,
    /// Cosine from peak to zero over the remaining steps.
    Cosine,
}

/// Linear warm-up to `peak`, then [`Decay`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_fraction: f64,
    pub decay: Decay,
}

impl LrSchedule {
    pub fn constant(peak: f64, warmup_fraction: f64) -> Self {
        LrSchedule { peak, warmup_fraction, decay: Decay::Constant }
    }

    pub fn cosine(peak: f64, warmup_fraction: f64) -> Self {
        LrSchedule { peak, warmup_fraction, decay: Decay::Cosine }
    }

    /// Rate for 0-based `step` out of `total_steps`.
    pub fn rate(&self, step: usize, total_steps: usize) -> f64 {
        if total_steps == 0 {
            return self.peak;
        }
        let warmup_steps = (self.warmup_fraction * total_steps as f64).floor() as usize;
        if step < warmup_steps {
            return self.peak * (step + 1) as f64 / warmup_steps as f64;
        }
        match self.decay {
            Decay::Constant => self.peak,
            Decay::Cosine => {
                let remaining = (total_steps - warmup_steps).max(1);
                let progress = (step - warmup_steps) as f64 / remaining as f64;
                self.peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Adam over one flat parameter vector.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One in-place update of `params` from `grads` at rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
