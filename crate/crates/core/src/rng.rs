//! Named, independent RNG streams split from a single master seed.
//!
//! Every source of randomness in a run (initialization, shuffling, sampled
//! noise, strategy coins, client partitioning and selection) draws from its
//! own ChaCha8 stream, so changing how often one stream is consumed never
//! shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derives the seed of the stream `name` from `master`.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(name)))
}

/// Derives a seed for the `index`-th member of a stream family (e.g. per-client streams).
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeds for the four streams a single training run consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub init: u64,
    pub shuffle: u64,
    pub noise: u64,
    pub coin: u64,
}

impl RunSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            init: derive_seed(master, "init"),
            shuffle: derive_seed(master, "shuffle"),
            noise: derive_seed(master, "noise"),
            coin: derive_seed(master, "coin"),
        }
    }
}
