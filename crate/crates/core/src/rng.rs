//! Seeded random streams.
//!
//! Every random draw in the crate goes through ChaCha20, a counter-based
//! generator whose output is fixed by (seed, stream) on every platform. Work
//! that fans out per item (one complex, one probe) takes its own stream so the
//! result does not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut SeededRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| normal(rng)).collect()
}

/// Uniform draw on the unit sphere.
pub fn unit_vector(rng: &mut SeededRng) -> [f64; 3] {
    loop {
        let v = [normal(rng), normal(rng), normal(rng)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}
