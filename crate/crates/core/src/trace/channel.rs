//! Two-state Gilbert-Elliott loss channel with scheduled regime switches.
//!
//! Stands in for real link logs: the hidden GOOD/BAD chain produces bursty
//! losses, and the regime schedule swaps the whole parameter set at given
//! sample indices to produce the slow, non-stationary FDR excursions seen on
//! real links.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Origin, Trace, DEFAULT_SAMPLE_PERIOD_S};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeState {
    Good,
    Bad,
}

/// Loss and transition probabilities of one channel regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeParams {
    /// Failure probability while GOOD.
    pub p_good_loss: f64,
    /// Failure probability while BAD.
    pub p_bad_loss: f64,
    pub p_g2b: f64,
    pub p_b2g: f64,
}

impl GeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_good_loss", self.p_good_loss),
            ("p_bad_loss", self.p_bad_loss),
            ("p_g2b", self.p_g2b),
            ("p_b2g", self.p_b2g),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(
                    "Gilbert-Elliott parameters",
                    format!("{name}={p} is not a probability"),
                ));
            }
        }
        Ok(())
    }

    /// Long-run delivery ratio of the stationary chain.
    pub fn stationary_fdr(&self) -> f64 {
        let flow = self.p_g2b + self.p_b2g;
        let pi_bad = if flow == 0.0 { 0.0 } else { self.p_g2b / flow };
        1.0 - (pi_bad * self.p_bad_loss + (1.0 - pi_bad) * self.p_good_loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSwitch {
    pub start_index: usize,
    pub params: GeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeChannelSpec {
    #[serde(flatten)]
    pub params: GeParams,
    #[serde(default)]
    pub regime_schedule: Vec<RegimeSwitch>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_state")]
    pub initial_state: GeState,
}

fn default_state() -> GeState {
    GeState::Good
}

impl GeChannelSpec {
    pub fn stationary(params: GeParams, seed: u64) -> Self {
        GeChannelSpec {
            params,
            regime_schedule: Vec::new(),
            seed,
            initial_state: GeState::Good,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        for pair in self.regime_schedule.windows(2) {
            if pair[1].start_index <= pair[0].start_index {
                return Err(Error::validation(
                    "regime schedule",
                    format!(
                        "start indices must increase strictly ({} then {})",
                        pair[0].start_index, pair[1].start_index
                    ),
                ));
            }
        }
        for switch in &self.regime_schedule {
            switch.params.validate()?;
        }
        Ok(())
    }
}

/// Draws `length` outcomes from the channel. Every step first moves the
/// hidden state, then emits a failure with the new state's loss probability.
pub fn generate_ge_trace(
    spec: &GeChannelSpec,
    length: usize,
    channel_label: &str,
) -> Result<Trace> {
    spec.validate()?;
    if length == 0 {
        return Err(Error::validation("trace length", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut state = spec.initial_state;
    let mut active = spec.params;
    let mut schedule = spec.regime_schedule.iter().peekable();
    let mut outcomes = Vec::with_capacity(length);
    for i in 0..length {
        while let Some(switch) = schedule.next_if(|s| s.start_index <= i) {
            active = switch.params;
        }
        // Two draws per step regardless of branch keeps the stream aligned.
        let u_move: f64 = rng.gen();
        let u_emit: f64 = rng.gen();
        state = match state {
            GeState::Good if u_move < active.p_g2b => GeState::Bad,
            GeState::Bad if u_move < active.p_b2g => GeState::Good,
            s => s,
        };
        let p_loss = match state {
            GeState::Good => active.p_good_loss,
            GeState::Bad => active.p_bad_loss,
        };
        outcomes.push((u_emit >= p_loss) as u8);
    }
    Ok(Trace::new(
        outcomes,
        DEFAULT_SAMPLE_PERIOD_S,
        channel_label,
        Origin::Synthetic,
    )?
    .with_seed(Some(spec.seed)))
}
