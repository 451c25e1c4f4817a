//! Seed derivation.
//!
//! Every stochastic stage draws its seed from the root seed and a stable
//! stage name: `seed = xxh3_64(stage_name, seed = root)`. Changing the root
//! seed changes every stage; fixing it reproduces the run bit-exactly.
//! Randomness comes from ChaCha8, whose stream is platform independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh3::xxh3_64_with_seed;

pub fn derive_seed(root: u64, stage: &str) -> u64 {
    xxh3_64_with_seed(stage.as_bytes(), root)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(root: u64, stage: &str) -> ChaCha8Rng {
    rng(derive_seed(root, stage))
}
