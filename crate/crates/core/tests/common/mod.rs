#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rdcov::Dataset;

/// Uniform scores on [-1, 1], a smooth cubic mean with a jump, normal noise
/// and two covariates correlated with the outcome.
pub fn sample(seed: u64, n: usize, jump: f64, noise: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut z1 = Vec::with_capacity(n);
    let mut z2 = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.random_range(-1.0..1.0);
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        let t = if xi >= 0.0 { jump } else { 0.0 };
        x.push(xi);
        y.push(0.5 + 0.8 * xi - 0.6 * xi * xi + 0.3 * xi.powi(3) + t + 0.7 * a - 0.2 * b + noise * e);
        z1.push(a + 0.1 * xi);
        z2.push(b);
    }
    Dataset::new(x, y, 0.0)
        .unwrap()
        .with_covariate_values("z1", z1)
        .unwrap()
        .with_covariate_values("z2", z2)
        .unwrap()
}
