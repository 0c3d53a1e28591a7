//! Counter-based seed derivation for reproducible Monte Carlo.
//!
//! Every simulation run owns an [`RngSpec`] built from a master seed and a
//! stream index. The pair is pushed through a SplitMix64 finaliser to seed a
//! ChaCha8 generator, so runs can be executed in any order (or in parallel)
//! and still reproduce bit-identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator used by every simulator in the crate.
pub type SimRng = ChaCha8Rng;

/// SplitMix64 output function.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed plus stream index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub master_seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub const fn new(master_seed: u64, stream: u64) -> Self {
        Self {
            master_seed,
            stream,
        }
    }

    /// Mixed 64-bit seed for this (master, stream) pair.
    pub fn derived_seed(&self) -> u64 {
        splitmix64(self.master_seed ^ splitmix64(self.stream.wrapping_add(0xA076_1D64_78BD_642F)))
    }

    /// Independent sub-stream, e.g. one per simulation stage of a run.
    pub fn child(&self, tag: u64) -> Self {
        Self {
            master_seed: self.derived_seed(),
            stream: tag,
        }
    }

    pub fn rng(&self) -> SimRng {
        ChaCha8Rng::seed_from_u64(self.derived_seed())
    }
}

/// Exponential variate with the given rate, by inversion.
#[inline]
pub fn exp_sample<R: rand::Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    // 1 - U lies in (0, 1], so the log is finite.
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}
