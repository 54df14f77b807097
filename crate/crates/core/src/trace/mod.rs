//! Binary frame-outcome traces and the forward-looking FDR targets derived
//! from them.
//!
//! A trace is the ordered sequence of per-frame outcomes of a link sampled
//! at a fixed period: `1` when the ACK came back, `0` otherwise. The quantity
//! being forecast at step `i` is the frame delivery ratio of the *next*
//! `window` samples, i.e. the mean of outcomes `i+1 ..= i+window`.

mod channel;
mod io;

use std::fmt;
use std::str::FromStr;

pub use channel::{generate_ge_trace, GeChannelSpec, GeParams, GeState, RegimeSwitch};
pub use io::{load_trace, read_trace, save_trace, write_trace};

use crate::error::{Error, Result};

/// Default sampling period of the probing traffic, in seconds.
pub const DEFAULT_SAMPLE_PERIOD_S: f64 = 0.5;

/// Default forecast horizon in samples: 3600 samples at 0.5 s is 30 minutes.
pub const DEFAULT_WINDOW: usize = 3600;

/// Training share of the train/test split preset (121 training days out of
/// 220 in total).
pub const PRESET_TRAIN_FRACTION: f64 = 121.0 / 220.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Measured,
    Synthetic,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Measured => "measured",
            Origin::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "measured" => Ok(Origin::Measured),
            "synthetic" => Ok(Origin::Synthetic),
            other => Err(format!("unknown origin {other:?}")),
        }
    }
}

/// An ordered sequence of binary transmission outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    outcomes: Vec<u8>,
    sample_period_s: f64,
    channel_label: String,
    origin: Origin,
    seed: Option<u64>,
}

impl Trace {
    pub fn new(
        outcomes: Vec<u8>,
        sample_period_s: f64,
        channel_label: impl Into<String>,
        origin: Origin,
    ) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::validation(
                "trace",
                "a trace needs at least one sample",
            ));
        }
        if let Some(pos) = outcomes.iter().position(|&x| x > 1) {
            return Err(Error::validation(
                "trace",
                format!("outcome {} at index {pos} is not 0 or 1", outcomes[pos]),
            ));
        }
        if !(sample_period_s.is_finite() && sample_period_s > 0.0) {
            return Err(Error::validation(
                "trace",
                format!("sample_period_s must be positive, got {sample_period_s}"),
            ));
        }
        let channel_label = channel_label.into();
        check_label(&channel_label)?;
        Ok(Trace {
            outcomes,
            sample_period_s,
            channel_label,
            origin,
            seed: None,
        })
    }

    /// Convenience constructor for measured data with the default period.
    pub fn from_outcomes(outcomes: Vec<u8>, channel_label: impl Into<String>) -> Result<Self> {
        Trace::new(
            outcomes,
            DEFAULT_SAMPLE_PERIOD_S,
            channel_label,
            Origin::Measured,
        )
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    /// Always false: a trace holds at least one sample.
    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn sample_period_s(&self) -> f64 {
        self.sample_period_s
    }

    pub fn channel_label(&self) -> &str {
        &self.channel_label
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Fraction of successful transmissions over the whole trace.
    pub fn fdr(&self) -> f64 {
        self.outcomes.iter().map(|&x| x as u64).sum::<u64>() as f64 / self.len() as f64
    }

    /// Mean of the first `min(n, len)` outcomes.
    pub fn prefix_mean(&self, n: usize) -> f64 {
        let n = n.clamp(1, self.len());
        self.outcomes[..n].iter().map(|&x| x as u64).sum::<u64>() as f64 / n as f64
    }

    /// Splits the trace at `boundary`: the first part holds samples
    /// `0..boundary`, the second `boundary..`.
    pub fn split_train_test(&self, boundary: usize) -> Result<(Trace, Trace)> {
        if boundary == 0 || boundary >= self.len() {
            return Err(Error::validation(
                "split boundary",
                format!("{boundary} is outside 1..{}", self.len()),
            ));
        }
        let part = |range: &[u8]| Trace {
            outcomes: range.to_vec(),
            ..self.clone_meta()
        };
        Ok((
            part(&self.outcomes[..boundary]),
            part(&self.outcomes[boundary..]),
        ))
    }

    /// Splits using a training fraction in (0, 1), e.g. [`PRESET_TRAIN_FRACTION`].
    pub fn split_by_fraction(&self, train_fraction: f64) -> Result<(Trace, Trace)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::validation(
                "train fraction",
                format!("{train_fraction} is outside (0, 1)"),
            ));
        }
        self.split_train_test((self.len() as f64 * train_fraction).round() as usize)
    }

    fn clone_meta(&self) -> Trace {
        Trace {
            outcomes: Vec::new(),
            sample_period_s: self.sample_period_s,
            channel_label: self.channel_label.clone(),
            origin: self.origin,
            seed: self.seed,
        }
    }
}

fn check_label(label: &str) -> Result<()> {
    if label.is_empty()
        || label
            .chars()
            .any(|c| c.is_whitespace() || c == ',' || c == '=')
    {
        return Err(Error::validation(
            "channel label",
            format!("{label:?} must be non-empty without whitespace, ',' or '='"),
        ));
    }
    Ok(())
}

/// Future-window FDR targets: `values[i]` is the mean of outcomes
/// `i+1 ..= i+window` (0-based), so the last `window` samples have no target.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSeries {
    values: Vec<f64>,
    window: usize,
}

impl TargetSeries {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Targets from index `start` on. Used to drop the EMA warm-up prefix.
    pub fn skip(&self, start: usize) -> &[f64] {
        &self.values[start.min(self.values.len())..]
    }
}

pub fn compute_fdr_targets(trace: &Trace, window: usize) -> Result<TargetSeries> {
    if window == 0 {
        return Err(Error::validation("window", "must be at least 1 sample"));
    }
    let len = trace.len();
    if len <= window {
        return Err(Error::TraceTooShort {
            len,
            window,
            needed: window + 1,
        });
    }
    let x = trace.outcomes();
    let w = window as f64;
    // Integer running sum keeps every value exactly count / window.
    let mut sum: u64 = x[1..=window].iter().map(|&v| v as u64).sum();
    let mut values = Vec::with_capacity(len - window);
    values.push(sum as f64 / w);
    for i in 1..len - window {
        sum += x[i + window] as u64;
        sum -= x[i] as u64;
        values.push(sum as f64 / w);
    }
    Ok(TargetSeries { values, window })
}
