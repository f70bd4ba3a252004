//! Seeded random data used by experiments and tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Standard-normal coefficients rescaled so that `Σ weight_j c_j² = 1`.
pub fn normalized_coefficients(rng: &mut ChaCha8Rng, weights: &[f64]) -> Vec<f64> {
    let mut c = normal_vec(rng, weights.len());
    let s: f64 = c.iter().zip(weights).map(|(x, w)| w * x * x).sum::<f64>().sqrt();
    if s > 0.0 {
        c.iter_mut().for_each(|x| *x /= s);
    }
    c
}
