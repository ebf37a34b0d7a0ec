//! Uniform dequantization of integer-valued complement features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DequantConfig {
    pub enabled: bool,
    /// Features are stored as `(k + noise) / scale`.
    pub scale: f64,
}

impl Default for DequantConfig {
    fn default() -> Self {
        DequantConfig { enabled: true, scale: 1.0 }
    }
}

impl DequantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!("dequantization scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    /// `(h + U[0, 1)) / scale` per entry; the identity when disabled.
    pub fn dequantize(&self, h: &[f64], rng: &mut SeededRng) -> Vec<f64> {
        if !self.enabled {
            return h.to_vec();
        }
        h.iter().map(|&k| (k + rng.random::<f64>()) / self.scale).collect()
    }

    /// Inverse of [`DequantConfig::dequantize`]: `floor(y · scale)`, with a
    /// small allowance for rounding in the division.
    pub fn quantize(&self, y: &[f64]) -> Vec<f64> {
        if !self.enabled {
            return y.to_vec();
        }
        y.iter().map(|&v| (v * self.scale + 1e-9).floor()).collect()
    }
}
