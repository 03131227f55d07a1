//! Deterministic seed derivation.
//!
//! Every random draw in an experiment comes from a ChaCha8 stream whose seed
//! is a SplitMix64 hash of `(master seed, stream tag, key...)`. Keys are
//! values that identify a work item (a sweep-point value, a trial index), so
//! adding sweep points or trials never changes the draws of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Profile = 0x5052_4f46,
    GainPhase = 0x4741_494e,
    Noise = 0x4e4f_4953,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, keys: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(stream as u64));
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k));
    }
    h
}

pub fn stream_rng(master: u64, stream: Stream, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, keys))
}
