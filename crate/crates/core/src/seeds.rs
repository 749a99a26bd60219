//! Deterministic seed derivation.
//!
//! One master seed expands through a SplitMix64 stream into independent
//! per-purpose seeds. Finer-grained seeds (per epoch, per sample) are derived
//! by hashing a purpose seed together with integer coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One step of the SplitMix64 generator.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes integer coordinates into a base seed.
pub fn derive(base: u64, coords: &[u64]) -> u64 {
    let mut state = base;
    let mut out = splitmix64(&mut state);
    for &c in coords {
        state ^= c.wrapping_mul(0xD6E8_FEB8_6659_FD93).rotate_left(17);
        out = splitmix64(&mut state) ^ out.rotate_left(23);
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeds for each source of randomness in one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub data: u64,
    pub noise: u64,
    pub init0: u64,
    pub init1: u64,
    pub shuffle: u64,
    pub augment: u64,
    pub metrics: u64,
}

impl SeedPlan {
    /// Stream order: data, noise, init0, init1, shuffle, augment, metrics.
    pub fn from_master(master: u64) -> Self {
        let mut s = master;
        let data = splitmix64(&mut s);
        let noise = splitmix64(&mut s);
        let init0 = splitmix64(&mut s);
        let init1 = splitmix64(&mut s);
        let shuffle = splitmix64(&mut s);
        let augment = splitmix64(&mut s);
        let metrics = splitmix64(&mut s);
        Self {
            master,
            data,
            noise,
            init0,
            init1,
            shuffle,
            augment,
            metrics,
        }
    }
}
