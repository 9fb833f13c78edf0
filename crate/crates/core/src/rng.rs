//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose 256-bit
//! key is expanded from a single `u64` with SplitMix64. Independent substreams
//! (one per Monte Carlo sample, one per grid point) are obtained by hashing the
//! pair `(seed, index)`, so results never depend on the order in which
//! parallel workers pick up their work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of substream `index` derived from `seed`.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    let mut s = seed;
    let a = splitmix64(&mut s);
    let mut t = index ^ a.rotate_left(17);
    splitmix64(&mut t) ^ a
}

/// Generator for a fully specified seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Generator for substream `index` of `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    stream(substream_seed(seed, index))
}
