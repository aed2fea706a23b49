//! Deterministic derivation of independent RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a master seed with a stream label and an index (splitmix64 finaliser).
pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(0x94d0_49bb_1331_11eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream, index))
}

/// Stream labels, so that unrelated consumers never share a sequence.
pub mod streams {
    pub const EXPLORATION: u64 = 1;
    pub const LABEL: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const INIT: u64 = 4;
    pub const VALUE: u64 = 5;
    pub const MATCH: u64 = 6;
    pub const REINFORCE: u64 = 7;
    pub const SPLIT: u64 = 8;
}
