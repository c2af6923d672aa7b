//! Deterministic seed streams.
//!
//! Every random quantity in a pipeline is drawn from a generator seeded by
//! `(base seed, stream label, index)`. Streams are independent of execution
//! order, which is what lets learner rollouts run in parallel without
//! changing the output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed, a stream label and an index into a child seed.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    // FNV-1a over the label, then avalanche with the numeric parts.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(base ^ h).wrapping_add(index))
}

pub fn rng_for(base: u64, stream: &str, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, stream, index))
}
