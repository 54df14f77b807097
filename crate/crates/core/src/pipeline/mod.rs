//! End-to-end experiments: every (test channel, training source, model)
//! cell calibrates, trains or evaluates, and scores the test split.

pub mod benchmark;
pub mod config;
pub mod experiment;
pub mod features;
pub mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ArchKind;

pub use config::{ChannelConfig, ChannelSource, ExperimentConfig, Split, SweepConfig, TraceInput};
pub use experiment::{run_experiment, CellOutcome, CellResult, ExperimentResult};
pub use report::{read_csv, render_text, write_csv, ReportRow};

/// Which channels' training splits a cell learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingSource {
    SameChannel,
    AllChannels,
    AllExceptTest,
}

impl TrainingSource {
    pub const ALL: [TrainingSource; 3] = [
        TrainingSource::SameChannel,
        TrainingSource::AllChannels,
        TrainingSource::AllExceptTest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingSource::SameChannel => "same_channel",
            TrainingSource::AllChannels => "all_channels",
            TrainingSource::AllExceptTest => "all_except_test",
        }
    }

    /// Indices of the training channels for test channel `test` out of
    /// `n` channels, in channel order.
    pub fn training_channels(self, test: usize, n: usize) -> Vec<usize> {
        match self {
            TrainingSource::SameChannel => vec![test],
            TrainingSource::AllChannels => (0..n).collect(),
            TrainingSource::AllExceptTest => (0..n).filter(|&i| i != test).collect(),
        }
    }

    /// Text of the "training channel" report column.
    pub fn column_label(self, test_label: &str) -> String {
        match self {
            TrainingSource::SameChannel => test_label.to_string(),
            TrainingSource::AllChannels => "all".to_string(),
            TrainingSource::AllExceptTest => format!("all-but-{test_label}"),
        }
    }
}

impl fmt::Display for TrainingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainingSource::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown training source {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ema,
    Hourglass,
    Pyramid,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Ema, ModelKind::Hourglass, ModelKind::Pyramid];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ema => "ema",
            ModelKind::Hourglass => "hourglass",
            ModelKind::Pyramid => "pyramid",
        }
    }

    /// Network shape, `None` for the single-filter baseline.
    pub fn arch(self) -> Option<ArchKind> {
        match self {
            ModelKind::Ema => None,
            ModelKind::Hourglass => Some(ArchKind::Hourglass),
            ModelKind::Pyramid => Some(ArchKind::Pyramid),
        }
    }

    /// Text of the "prediction model" report column.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Ema => "EMA",
            ModelKind::Hourglass => "Hourglass",
            ModelKind::Pyramid => "Pyramid",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == lower)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

/// One experiment cell. Cells sort by test channel, then source, then model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScenarioSpec {
    pub test_channel: String,
    pub training_source: TrainingSource,
    pub model_kind: ModelKind,
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.test_channel, self.training_source, self.model_kind
        )
    }
}
