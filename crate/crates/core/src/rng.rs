//! Seed derivation.
//!
//! Every random decision in the crate draws from a ChaCha8 stream whose seed
//! is derived from a master seed plus a path of integers naming the decision
//! (iteration, fold, sample id, ...). Results therefore do not depend on the
//! order in which work is scheduled or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags, so that e.g. fold splitting and training never share a stream.
pub mod tag {
    pub const FOLDS: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const BLOBS: u64 = 4;
    pub const ITERATION: u64 = 5;
    pub const FOLD: u64 = 6;
    pub const VALIDATION: u64 = 7;
    pub const EPOCH: u64 = 8;
    pub const INIT: u64 = 9;
    pub const MONTE_CARLO: u64 = 10;
    pub const STUB: u64 = 11;
    pub const SWEEP: u64 = 12;
    pub const RETRAIN: u64 = 13;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a path of indices.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// A generator for the stream named by `path` under `seed`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_are_order_sensitive() {
        assert_ne!(derive(7, &[1, 2]), derive(7, &[2, 1]));
        assert_ne!(derive(7, &[1]), derive(7, &[1, 0]));
        assert_eq!(derive(7, &[3, 4]), derive(7, &[3, 4]));
    }
}
