use serde::{Deserialize, Serialize};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-12,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Adam {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        let c = self.cfg;
        self.t += 1;
        let b1 = 1.0 - c.beta1.powi(self.t as i32);
        let b2 = 1.0 - c.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g;
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g;
            let mh = self.m[k] / b1;
            let vh = self.v[k] / b2;
            params[k] -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * params[k]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamConfig {
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut a = Adam::new(no_decay(), 3);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            a.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_moves_by_lr_per_step() {
        // With a constant gradient the bias-corrected ratio is g/(|g| + eps).
        let mut a = Adam::new(no_decay(), 2);
        let mut p = vec![0.0, 0.0];
        for _ in 0..10 {
            a.step(&mut p, &[3.0, -0.5]);
        }
        let lr = a.cfg.lr;
        assert!((p[0] + 10.0 * lr).abs() < 1e-10);
        assert!((p[1] - 10.0 * lr).abs() < 1e-10);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..AdamConfig::default()
        };
        let mut a = Adam::new(cfg, 1);
        let mut p = vec![2.0];
        a.step(&mut p, &[0.4]);
        let want = 2.0 - 0.1 * (0.4 / (0.4 + 1e-8) + 0.01 * 2.0);
        assert!((p[0] - want).abs() < 1e-15);
        assert_eq!(a.t, 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..no_decay()
        };
        let mut a = Adam::new(cfg, 2);
        let mut p = vec![3.0, -1.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 2.0)];
            a.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-2 && (p[1] + 2.0).abs() < 1e-2, "{p:?}");
    }
}
