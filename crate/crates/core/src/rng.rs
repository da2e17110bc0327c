//! Seeded random source shared by every stochastic operation.
//!
//! All simulation randomness flows through [`SimRng`], a thin wrapper around
//! xoshiro256++ seeded through SplitMix64. Parallel work never shares a
//! generator: each replica gets its own stream from [`SimRng::substream`],
//! keyed on `(seed, index)` so results do not depend on scheduling.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of substream `index` under master `seed`.
///
/// `mix64(seed + (index + 1) * GOLDEN_GAMMA)`: the (index + 1)-th SplitMix64
/// output of a generator started at `seed`. Appending indices never changes
/// the seeds of earlier ones.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: Xoshiro256PlusPlus,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent stream for replica/worker `index`.
    pub fn substream(seed: u64, index: u64) -> Self {
        Self::new(derive_seed(seed, index))
    }

    /// Uniform variate on `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli trial using the strict `u < p` convention, so `p = 0` never
    /// fires and `p = 1` always does.
    #[inline]
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}
