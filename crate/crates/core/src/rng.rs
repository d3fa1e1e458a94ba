//! Seed-stream derivation.
//!
//! Every random stream in the engine is a `ChaCha8Rng` seeded from
//! `derive_seed(root, tag)`: FNV-1a over the tag bytes, mixed with the root
//! seed through SplitMix64. Index-based streams (`derive_indexed`) fold an
//! extra counter in the same way, so chunked work is reproducible no matter
//! how it is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn derive_seed(root: u64, tag: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(tag.as_bytes())))
}

pub fn derive_indexed(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(root, tag) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(root: u64, tag: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, tag))
}

pub fn indexed_stream(root: u64, tag: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_indexed(root, tag, index))
}
