//! Counter-based random streams.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(seed, purpose, iteration, slot, attempt)`. ChaCha is a PRF over its key,
//! so distinct tuples give independent streams and the result of a run does
//! not depend on the order in which slots are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every stream in the crate.
pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Keeps streams for different purposes disjoint
/// even when the counters coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    Sampler = 1,
    Data = 2,
    Auxiliary = 3,
}

pub fn stream(seed: u64, purpose: Purpose, iteration: u64, slot: u64, attempt: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(((purpose as u64) << 48) ^ iteration).to_le_bytes());
    key[16..24].copy_from_slice(&slot.to_le_bytes());
    key[24..32].copy_from_slice(&attempt.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Stream for one-off uses (data generation, tests).
pub fn seeded(seed: u64, purpose: Purpose) -> StreamRng {
    stream(seed, purpose, 0, 0, 0)
}
