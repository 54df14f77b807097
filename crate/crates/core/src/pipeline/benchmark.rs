//! The seeded synthetic channel suite used for the comparative benchmark.
//!
//! Each channel is a Gilbert-Elliott chain whose parameters change at
//! regime switches spaced 20k to 50k samples apart. A channel owns a small
//! palette of regime types that recur over its lifetime. Within a regime
//! the GOOD-state loss sets the background level, and BAD episodes lasting
//! hundreds of samples drop the delivery ratio sharply.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{GeChannelSpec, GeParams, GeState, RegimeSwitch};

/// Ranges regime parameters are drawn from, uniformly unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeSampler {
    pub min_regime_len: usize,
    pub max_regime_len: usize,
    pub good_loss: (f64, f64),
    pub bad_loss: (f64, f64),
    /// Stationary probability of the BAD state.
    pub bad_fraction: (f64, f64),
    /// Mean BAD dwell time in samples, drawn log-uniformly.
    pub bad_dwell: (f64, f64),
    /// Number of recurring regime types per channel; 0 draws fresh
    /// parameters at every switch.
    pub palette_size: usize,
}

impl Default for RegimeSampler {
    fn default() -> Self {
        RegimeSampler {
            min_regime_len: 20_000,
            max_regime_len: 50_000,
            good_loss: (0.01, 0.2),
            bad_loss: (0.6, 0.9),
            bad_fraction: (0.03, 0.1),
            bad_dwell: (300.0, 1500.0),
            palette_size: 3,
        }
    }
}

impl RegimeSampler {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo <= hi;
        let prob = |(lo, hi): (f64, f64)| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi);
        if self.min_regime_len == 0 || self.min_regime_len > self.max_regime_len {
            return Err(Error::validation(
                "regime sampler",
                "need 0 < min_regime_len <= max_regime_len",
            ));
        }
        for (name, range) in [
            ("good_loss", self.good_loss),
            ("bad_loss", self.bad_loss),
            ("bad_fraction", self.bad_fraction),
        ] {
            if !ordered(range) || !prob(range) {
                return Err(Error::validation(
                    "regime sampler",
                    format!("{name} must be an ordered range inside [0, 1]"),
                ));
            }
        }
        if self.bad_fraction.1 >= 1.0 {
            return Err(Error::validation(
                "regime sampler",
                "bad_fraction must stay below 1",
            ));
        }
        if !ordered(self.bad_dwell) || self.bad_dwell.0 < 1.0 {
            return Err(Error::validation(
                "regime sampler",
                "bad_dwell must be an ordered range of at least 1 sample",
            ));
        }
        Ok(())
    }

    fn draw_params(&self, rng: &mut ChaCha8Rng) -> GeParams {
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            }
        };
        let p_good_loss = uniform(rng, self.good_loss);
        let p_bad_loss = uniform(rng, self.bad_loss);
        let bad_fraction = uniform(rng, self.bad_fraction);
        let (dlo, dhi) = self.bad_dwell;
        let dwell = uniform(rng, (dlo.ln(), dhi.ln())).exp();
        let p_b2g = 1.0 / dwell;
        let p_g2b = (p_b2g * bad_fraction / (1.0 - bad_fraction)).min(1.0);
        GeParams {
            p_good_loss,
            p_bad_loss,
            p_g2b,
            p_b2g,
        }
    }

    /// Channel spec covering `length` samples with regimes drawn from
    /// `seed`. The same seed also drives the chain itself.
    ///
    /// With a palette, the first regimes visit every type once in random
    /// order; later regimes pick uniformly among the types other than the
    /// current one.
    pub fn channel_spec(&self, seed: u64, length: usize) -> Result<GeChannelSpec> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let palette: Vec<GeParams> = (0..self.palette_size)
            .map(|_| self.draw_params(&mut rng))
            .collect();
        let mut tour: Vec<usize> = (0..palette.len()).collect();
        tour.shuffle(&mut rng);
        let mut current = tour.first().copied();
        let mut next_params = |rng: &mut ChaCha8Rng, visited: usize| -> GeParams {
            if palette.is_empty() {
                return self.draw_params(rng);
            }
            let k = if visited < tour.len() {
                tour[visited]
            } else if palette.len() == 1 {
                0
            } else {
                let cur = current.unwrap_or(0);
                let pick = rng.gen_range(0..palette.len() - 1);
                if pick >= cur {
                    pick + 1
                } else {
                    pick
                }
            };
            current = Some(k);
            palette[k]
        };
        let params = next_params(&mut rng, 0);
        let mut schedule = Vec::new();
        let mut start = rng.gen_range(self.min_regime_len..=self.max_regime_len);
        while start < length {
            let params = next_params(&mut rng, schedule.len() + 1);
            schedule.push(RegimeSwitch {
                start_index: start,
                params,
            });
            start += rng.gen_range(self.min_regime_len..=self.max_regime_len);
        }
        Ok(GeChannelSpec {
            params,
            regime_schedule: schedule,
            seed,
            initial_state: GeState::Good,
        })
    }
}

/// Samples per benchmark channel.
pub const BENCHMARK_LENGTH: usize = 200_000;
/// Training share of each benchmark channel.
pub const BENCHMARK_TRAIN_FRACTION: f64 = 0.6;

/// Labels and seeds of the four shipped benchmark channels.
pub const BENCHMARK_CHANNELS: [(&str, u64); 4] =
    [("ch1", 101), ("ch5", 505), ("ch9", 909), ("ch13", 1313)];

pub fn benchmark_suite() -> Vec<(String, GeChannelSpec)> {
    let sampler = RegimeSampler::default();
    BENCHMARK_CHANNELS
        .iter()
        .map(|&(label, seed)| {
            let spec = sampler
                .channel_spec(seed, BENCHMARK_LENGTH)
                .expect("default sampler is valid");
            (label.to_string(), spec)
        })
        .collect()
}
