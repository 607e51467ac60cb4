//! Seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha8 stream whose seed is
//! derived from a root seed and a list of integer tags with [`mix`]. The mixing
//! function is SplitMix64 folded over the tags, so derived streams are stable
//! across releases and independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, so unrelated draws sharing a root seed never collide.
pub mod tag {
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const PHANTOM: u64 = 0x7068_616e;
    pub const PRIOR_SLICE: u64 = 0x7072_696f;
    pub const SAMPLING: u64 = 0x6b65_6570;
    pub const DATASET: u64 = 0x6461_7461;
    pub const TRAIN: u64 = 0x7472_6169;
    pub const INIT: u64 = 0x696e_6974;
    pub const INIT_LATENT: u64 = 0x6c61_7465;
    pub const MINIBATCH: u64 = 0x6d69_6e69;
    pub const RENOISE: u64 = 0x7265_6e6f;
    pub const SPLIT: u64 = 0x7370_6c69;
    pub const AUX: u64 = 0x6175_7869;
    pub const CELL: u64 = 0x6365_6c6c;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and `tags`.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}
