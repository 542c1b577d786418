//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator. A stream that
//! belongs to a larger run derives its seed from the top-level seed:
//!
//! * Wishart realisation `i` uses `seed ^ i`.
//! * Any other named stream uses [`derive`], a SplitMix64 finaliser applied
//!   to the parent seed mixed with each path component in turn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` and a path of stream identifiers.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(parent), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
