//! Shared inputs for the benchmarks.

use oqns_core::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gradients of norm at most 1 drawn from a fixed seed.
pub fn gradients(dim: usize, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let n = v.norm().max(1.0);
            v / n
        })
        .collect()
}
