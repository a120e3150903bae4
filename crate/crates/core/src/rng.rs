//! Deterministic random stream derivation.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by
//! `(seed, worker, round, purpose)`. Data sampling and compressor rounding
//! use distinct purposes, so swapping the compressor never perturbs the
//! minibatch sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Data = 1,
    Compressor = 2,
    Init = 3,
    Problem = 4,
    Certify = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(worker, round, purpose)` into a 64-bit key and xors it with the seed.
pub fn derive_seed(seed: u64, worker: u64, round: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(worker ^ 0x5157_4F52_4B45_5221);
    h = splitmix64(h ^ round);
    h = splitmix64(h ^ purpose as u64);
    seed ^ h
}

pub fn stream(seed: u64, worker: u64, round: u64, purpose: Purpose) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, worker, round, purpose))
}
