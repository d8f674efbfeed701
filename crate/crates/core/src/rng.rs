//! Keyed random streams.
//!
//! Every random decision draws from a generator derived from
//! `(seed, purpose, a, b)`, e.g. `(replicate seed, ClientTraining, round,
//! client id)`. Work can therefore be reordered or run concurrently without
//! changing any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Synthetic = 1,
    ModelInit = 2,
    LabeledSubset = 3,
    Partition = 4,
    Selection = 5,
    ClientTraining = 6,
    ServerTraining = 7,
    PseudoLabel = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit key of a stream.
pub fn stream_key(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    for part in [purpose as u64, a, b] {
        h = splitmix64(h ^ part);
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, purpose, a, b))
}
