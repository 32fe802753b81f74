//! Shared fixtures for the benchmarks.

use segrefine_core::harness::{BenchCase, BenchParams};
use segrefine_core::scene::GeneratorConfig;

/// A 160×120 scene with `objects` objects and three corruptions.
pub fn case(seed: u64, objects: usize) -> BenchCase {
    BenchParams {
        generator: GeneratorConfig::default(),
        min_objects: objects,
        max_objects: objects,
        ..BenchParams::default()
    }
    .case(seed)
    .expect("benchmark scene")
}

/// Deterministic pseudo-random values in `[0, 1)` from a 64-bit LCG.
pub fn unit_values(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}
