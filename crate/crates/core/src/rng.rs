//! Seeded random streams.
//!
//! Every random decision in a run draws from a stream derived from one master
//! seed plus a (tag, a, b) coordinate, so per-client work can be scheduled on
//! any number of threads without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub const TAG_SELECT: u64 = 1;
pub const TAG_LOCAL: u64 = 2;
pub const TAG_INIT: u64 = 3;
pub const TAG_DATA: u64 = 4;
pub const TAG_PARTITION: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the master seed with a stream coordinate into a 64-bit seed.
pub fn derive_seed(master: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ tag);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b)
}

pub fn stream(master: u64, tag: u64, a: u64, b: u64) -> Stream {
    Stream::seed_from_u64(derive_seed(master, tag, a, b))
}

pub fn seeded(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}
