//! Seeded random streams.
//!
//! Every rollout draws from its own ChaCha stream keyed by `(seed, stream id)`,
//! so work split across threads reproduces the serial result exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids for the different consumers of one root seed.
pub mod purpose {
    pub const CORPUS: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const REWARD: u64 = 3;
    pub const PPO_INIT: u64 = 4;
    pub const PPO_COLLECT: u64 = 5;
    pub const PPO_SHUFFLE: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const WORLD: u64 = 8;
    pub const POLICY_INIT: u64 = 9;
}

/// Mixes a root seed with a purpose tag and an index into a child seed.
pub fn derive_seed(root: u64, purpose: u64, index: u64) -> u64 {
    let mut z = root
        ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(root: u64, purpose: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, 0));
    rng.set_stream(index);
    rng
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
