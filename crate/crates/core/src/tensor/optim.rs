use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Step decay: `lr = base · gamma^⌊epoch / interval⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub gamma: f64,
    pub interval: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            interval: 20,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        base * self.gamma.powi((epoch / self.interval.max(1)) as i32)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub schedule: LrSchedule,
    /// Learning rate used by the next step.
    pub lr: f64,
    /// Number of steps taken.
    pub t: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig, schedule: LrSchedule) -> Self {
        Self {
            config,
            schedule,
            lr: config.lr,
            t: 0,
            moments: Vec::new(),
        }
    }

    /// Sets the learning rate for `epoch` from the schedule.
    pub fn set_epoch(&mut self, epoch: usize) -> f64 {
        self.lr = self.schedule.lr_at(self.config.lr, epoch);
        self.lr
    }

    /// Updates every tensor from its accumulated gradient. Tensors without a
    /// gradient are skipped.
    pub fn step(&mut self, params: &mut [&mut Tensor]) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter list changed");
        self.t += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let lr = self.lr;
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            assert_eq!(m.len(), p.numel(), "parameter shape changed");
            let Some(g) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    pub fn moments(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.moments
    }

    /// Restores a saved step counter and moment arrays.
    pub fn restore(&mut self, t: u64, lr: f64, moments: Vec<(Vec<f64>, Vec<f64>)>) {
        self.t = t;
        self.lr = lr;
        self.moments = moments;
    }
}
