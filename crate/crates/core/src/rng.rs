//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a generator that is a pure
//! function of an [`RngKey`] `(seed, stream, index)` and a purpose tag, so
//! results never depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey {
    pub seed: u64,
    pub stream: u64,
    pub index: u64,
}

/// What a generator is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Potential = 1,
    FeynmanKac = 2,
    ProjectivePairs = 3,
    EigenSamples = 4,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit mix of a list of words.
pub fn mix(words: &[u64]) -> u64 {
    let mut state = 0x243f_6a88_85a3_08d3_u64;
    let mut acc = 0;
    for &w in words {
        state ^= w;
        acc = splitmix64(&mut state);
    }
    acc
}

impl RngKey {
    pub fn new(seed: u64, stream: u64, index: u64) -> Self {
        Self { seed, stream, index }
    }

    pub fn with_index(self, index: u64) -> Self {
        Self { index, ..self }
    }

    /// A child stream, disjoint from the parent and from other tags.
    pub fn substream(self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: mix(&[self.stream, tag, 0x5eb5_73e4]),
            index: self.index,
        }
    }

    pub fn rng(&self, purpose: Purpose) -> ChaCha8Rng {
        let mut state = mix(&[self.seed, self.stream, self.index, purpose as u64]);
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }
}
