//! Seed derivation.
//!
//! All randomness flows from one top-level `u64` seed. A purpose tag mixes the
//! seed into a ChaCha8 key; the (a, b) coordinates (usually client id and round)
//! select one of the 2^64 independent counter-based streams under that key:
//!
//! ```text
//! key    = seed_from_u64(splitmix64(seed ^ purpose_tag))
//! stream = (a << 32) | b
//! ```
//!
//! A client's stream for a round never depends on scheduling or on other
//! clients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    TrainData,
    TestData,
    Partition,
    Init,
    Client,
    Server,
    Eval,
    Active,
    Ood,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::TrainData => 0x7472_6169_6e00_0001,
            Purpose::TestData => 0x7465_7374_0000_0002,
            Purpose::Partition => 0x7061_7274_0000_0003,
            Purpose::Init => 0x696e_6974_0000_0004,
            Purpose::Client => 0x636c_6965_6e74_0005,
            Purpose::Server => 0x7365_7276_0000_0006,
            Purpose::Eval => 0x6576_616c_0000_0007,
            Purpose::Active => 0x6163_7469_7665_0008,
            Purpose::Ood => 0x6f6f_6400_0000_0009,
        }
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The 64-bit key of `purpose` under `seed`, for APIs that take a plain seed.
pub fn derive_seed(seed: u64, purpose: Purpose) -> u64 {
    splitmix64(seed ^ purpose.tag())
}

pub fn stream(seed: u64, purpose: Purpose, a: u32, b: u32) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose));
    rng.set_stream((u64::from(a) << 32) | u64::from(b));
    rng
}

/// Seeds a stream directly, for tests and standalone utilities.
pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
