//! Shared fixtures for the benchmarks.

use sahash::synth::{generate, SynthConfig};
use sahash::{BinaryCodeSet, FeatureMatrix};

/// Clustered features of the given shape, fixed seed.
pub fn features(clusters: usize, per_cluster: usize, d: usize) -> FeatureMatrix {
    generate(&SynthConfig {
        clusters,
        per_cluster,
        d,
        spread: 0.2,
        seed: 11,
    })
    .expect("synthetic features")
    .features
}

/// Pseudo-random codes, no RNG dependency needed for benchmark inputs.
pub fn codes(n: usize, l: usize, salt: u64) -> BinaryCodeSet {
    let mut state = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let values: Vec<f64> = (0..n * l)
        .map(|_| {
            // xorshift64
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            if state & 1 == 0 { -1.0 } else { 1.0 }
        })
        .collect();
    BinaryCodeSet::from_real(n, l, &values).expect("codes")
}
