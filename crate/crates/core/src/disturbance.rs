//! Stochastic perturbation sources: travel-delay noise and demand-rate noise.
//!
//! Sampling is counter-based: every draw is keyed by (seed, worker, episode,
//! bus, position, channel), so parallel workers never share mutable generator
//! state and any single sample can be reproduced in isolation.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncated normal distribution with rejection-resampling semantics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormalSpec {
    pub mean: f64,
    pub stddev: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) {
            return Err(Error::Config(format!(
                "truncated normal needs lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if !(self.stddev > 0.0) {
            return Err(Error::Config(format!(
                "truncated normal needs stddev > 0, got {}",
                self.stddev
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformSpec {
    pub lower: f64,
    pub upper: f64,
}

impl UniformSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lower > self.upper {
            return Err(Error::Config(format!(
                "uniform spec needs lower <= upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// Coordinates of one noise draw. Identical coordinates and seed yield the
/// identical sample, bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
    pub worker: u64,
    pub episode: u64,
    pub bus: u64,
    pub position: u64,
}

const CHANNEL_DELAY: u64 = 0xD1;
const CHANNEL_DEMAND: u64 = 0xD2;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a list of words into a single generator key.
pub fn mix_key(words: &[u64]) -> u64 {
    let mut state = 0x5bf0_3635_0c1d_2a47_u64;
    let mut acc = 0u64;
    for &w in words {
        state ^= w.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        acc ^= splitmix64(&mut state);
    }
    acc
}

impl NoiseStream {
    fn rng(&self, channel: u64) -> ChaCha8Rng {
        let key = mix_key(&[self.seed, self.worker, self.episode, self.bus, self.position, channel]);
        ChaCha8Rng::seed_from_u64(key)
    }
}

/// Uniform draw in [0, 1) with 53-bit resolution.
pub fn unit_uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw (Box-Muller).
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    // u1 in (0, 1] keeps the log finite
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = unit_uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

const MAX_REJECTIONS: usize = 1_000_000;

/// Travel-delay sample; redraws until the value lands inside the bounds.
pub fn sample_travel_delay(spec: &TruncatedNormalSpec, stream: &NoiseStream) -> f64 {
    let mut rng = stream.rng(CHANNEL_DELAY);
    for _ in 0..MAX_REJECTIONS {
        let z = spec.mean + spec.stddev * standard_normal(&mut rng);
        if z >= spec.lower && z <= spec.upper {
            return z;
        }
    }
    // Unreachable for any validated spec with nonnegligible mass in range.
    panic!(
        "truncated normal rejection failed after {MAX_REJECTIONS} draws (mean {}, stddev {}, bounds [{}, {}])",
        spec.mean, spec.stddev, spec.lower, spec.upper
    );
}

/// Demand-rate offset drawn uniformly from the spec interval.
pub fn sample_demand_perturbation(spec: &UniformSpec, stream: &NoiseStream) -> f64 {
    let mut rng = stream.rng(CHANNEL_DEMAND);
    spec.lower + (spec.upper - spec.lower) * unit_uniform(&mut rng)
}

/// Effective demand rate: nominal plus perturbation, clamped at zero since
/// dwell time cannot be negative.
pub fn effective_demand_rate(nominal: f64, perturbation: f64) -> f64 {
    (nominal + perturbation).max(0.0)
}
