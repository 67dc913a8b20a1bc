//! Seeded randomness shared by the generators and the samplers.
//!
//! The generator is xoshiro256** with its state expanded from a 64-bit seed
//! by SplitMix64. Uniform reals come from the top 53 bits of a draw.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};

pub type Rng = Xoshiro256StarStar;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Mixes `parts` into a child seed with one SplitMix64 step per part.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    for &p in parts {
        let mut sm = SplitMix64::seed_from_u64(state ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        state = sm.next_u64();
    }
    state
}
