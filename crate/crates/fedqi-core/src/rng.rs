//! Deterministic RNG streams.
//!
//! Every random decision in the simulator draws from a ChaCha stream whose
//! seed is derived from a master seed plus a role tag and optional indices
//! (round, participant, ...). Streams with different tags are independent,
//! so e.g. participant selection never perturbs local-training noise.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Role tags for derived streams. Values are arbitrary but fixed: changing
/// them changes every seeded run.
pub mod tag {
    pub const SPLIT: u64 = 0x01;
    pub const PERTURB: u64 = 0x02;
    pub const MODEL_INIT: u64 = 0x03;
    pub const SELECT: u64 = 0x04;
    pub const LOCAL_TRAIN: u64 = 0x05;
    pub const MASK_DEMO: u64 = 0x06;
    pub const SYNTH_SELECT: u64 = 0x07;
    pub const SYNTH_NOISE: u64 = 0x08;
}

// splitmix64 finalizer; good avalanche, cheap.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a seed value from `master` and a sequence of tags/indices.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = mix(master);
    for &t in tags {
        state = mix(state ^ t.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    state
}

/// Derive an independent RNG from `master` and a sequence of tags/indices.
pub fn derive(master: u64, tags: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(master, tags))
}
