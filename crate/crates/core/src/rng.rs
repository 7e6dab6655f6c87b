//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 block cipher used as a
//! counter-based generator. A 64-bit seed is expanded to the 256-bit ChaCha key
//! with four rounds of SplitMix64, and independent sub-streams are selected
//! through the 64-bit ChaCha stream (nonce) word. The same `(seed, stream)` pair
//! yields the same sequence on every platform and under any thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named purposes for sub-streams, folded into the ChaCha stream word so that
/// different consumers of the same seed never share a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Projection = 1,
    DataGen = 2,
    AlsInit = 3,
    Shuffle = 4,
    Folds = 5,
    Test = 15,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 output step (Steele, Lea & Flood).
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the `index`-th child seed of `master`.
///
/// `child = splitmix64(master + (index + 1) * GOLDEN_GAMMA)`, i.e. the
/// `(index + 1)`-th output of a SplitMix64 sequence started at `master`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut state = master.wrapping_add(index.wrapping_mul(GOLDEN_GAMMA));
    splitmix64(&mut state)
}

/// Opens the sub-stream `(purpose, index)` of `seed`.
///
/// `index` must fit in 56 bits; the top byte of the stream word is the purpose tag.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1 << 56));
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((purpose as u64) << 56) | index);
    rng
}
