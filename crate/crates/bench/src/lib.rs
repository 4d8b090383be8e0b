//! Shared fixtures for the benchmarks.

use ndf_core::{Enclosure, RoomSpec, SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform noise in [-1, 1), `seconds` long at the pipeline rate.
pub fn noise(seconds: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// A mid-sized office: 6 × 4.5 × 3 m.
pub fn office(rt60: f64) -> Enclosure {
    Enclosure::Shoebox(RoomSpec::new([6.0, 4.5, 3.0], rt60))
}
