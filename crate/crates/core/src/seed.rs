//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a 64-bit run seed plus a
//! small tuple of counters (time step, iteration, coordinate). Mixing is the
//! SplitMix64 finalizer, so derived seeds are decorrelated even for
//! consecutive counters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a counter.
#[inline]
pub fn derive(base: u64, counter: u64) -> u64 {
    mix64(base ^ mix64(counter.wrapping_mul(0xd6e8_feb8_6659_fd93)))
}

/// A ChaCha8 stream for `(seed, stream)`. ChaCha is counter-based, so the
/// stream id selects an independent keystream without any shared state.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
