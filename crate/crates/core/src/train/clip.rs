use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Adaptive gradient clipping against a running window of past norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clipper {
    pub window: usize,
    pub multiplier: f64,
    /// Pre-clip norms, oldest first.
    pub history: VecDeque<f64>,
}

impl Clipper {
    pub fn new(window: usize, multiplier: f64) -> Self {
        Clipper {
            window,
            multiplier,
            history: VecDeque::with_capacity(window),
        }
    }

    /// Current threshold, `None` while the history is empty.
    pub fn threshold(&self) -> Option<f64> {
        if self.history.is_empty() {
            return None;
        }
        let mean = self.history.iter().sum::<f64>() / self.history.len() as f64;
        Some(self.multiplier * mean)
    }

    /// Rescales `grad` to at most the threshold and records the pre-clip
    /// norm. Returns that norm.
    pub fn clip(&mut self, grad: &mut [f64]) -> f64 {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if let Some(th) = self.threshold() {
            if norm > th && norm > 0.0 {
                let s = th / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        if self.window > 0 {
            if self.history.len() == self.window {
                self.history.pop_front();
            }
            self.history.push_back(norm);
        }
        norm
    }
}
