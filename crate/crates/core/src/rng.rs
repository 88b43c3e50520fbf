//! Counter-based random streams.
//!
//! Every draw in the crate comes from a stream addressed by
//! `(master seed, replicate, step, particle)`. The ChaCha key is derived from
//! the first two coordinates and the 64-bit ChaCha stream id packs the last two,
//! so the value produced for a given particle never depends on which worker
//! touched it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed to kernels and samplers.
pub type StreamRng = ChaCha8Rng;

const MAX_COORD: u64 = u32::MAX as u64;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed plus the replicate coordinate; hands out per-(step, particle) streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    seed: u64,
    replicate: u64,
    key: [u8; 32],
}

impl StreamKey {
    pub fn new(seed: u64, replicate: u64) -> Self {
        let mut absorb = seed;
        let mut state = splitmix64(&mut absorb) ^ replicate;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        StreamKey { seed, replicate, key }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate(&self) -> u64 {
        self.replicate
    }

    /// Stream for `particle` at algorithmic step `step`.
    ///
    /// Both coordinates must fit in 32 bits.
    pub fn stream(&self, step: u64, particle: u64) -> StreamRng {
        assert!(step <= MAX_COORD && particle <= MAX_COORD, "stream coordinate exceeds 32 bits");
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream((step << 32) | particle);
        rng
    }
}

/// Shorthand for `StreamKey::new(seed, replicate).stream(step, particle)`.
pub fn stream(seed: u64, replicate: u64, step: u64, particle: u64) -> StreamRng {
    StreamKey::new(seed, replicate).stream(step, particle)
}
