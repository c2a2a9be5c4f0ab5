//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed by `(master seed, stream tag,
//! index)`, so results never depend on the order in which parallel work is
//! scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct tags keep unrelated consumers of the same master
/// seed statistically independent.
pub(crate) mod stream {
    pub const SYNTH_PATIENT: u64 = 1;
    pub const SYNTH_LAYOUT: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const KMEANS: u64 = 4;
    pub const TREE_FEATURES: u64 = 5;
    pub const TREE_BOOTSTRAP: u64 = 6;
    pub const BASELINE: u64 = 7;
    pub const CROSSVAL: u64 = 8;
    pub const SPLIT_FEATURES: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a stream tag and an index into a new seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag.rotate_left(17)) ^ index.rotate_left(41))
}

pub(crate) fn rng_for(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

/// FNV-1a, used to key per-patient streams by patient id rather than by
/// position in a cohort.
pub(crate) fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}
