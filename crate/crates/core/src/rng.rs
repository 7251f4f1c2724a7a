//! Seeded random streams.
//!
//! Every random draw in a simulation comes from a `Xoshiro256PlusPlus`
//! generator. Each (seed, stream, round) triple gets its own generator whose
//! 64-bit seed is derived with the SplitMix64 finalizer, and which is then
//! expanded to the full 256-bit state with SplitMix64 (`seed_from_u64`).
//! Any implementation reproducing these two steps reproduces the draws.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

/// Independent substreams of one simulation seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Devices = 1,
    Arrivals = 2,
    Workload = 3,
    Losses = 4,
    Instances = 5,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, stream: Stream, index: u64) -> SimRng {
    let s = splitmix64(splitmix64(seed ^ (stream as u64).rotate_left(56)) ^ index);
    SimRng::seed_from_u64(s)
}
