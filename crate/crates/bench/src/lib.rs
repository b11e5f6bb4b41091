//! Shared fixtures for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` rows of `p` uniform features in [0.2, 2.0], the multiplier window.
pub fn rows(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(0.2..2.0)).collect())
        .collect()
}

/// A smooth nonlinear scalar function of all inputs.
pub fn smooth(x: &[f64]) -> f64 {
    let linear: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (i as f64 + 1.0).recip() * v)
        .sum();
    linear.tanh() + x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() * 0.01
}
