//! Declarative experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! window = 3600
//! models = ["ema", "hourglass"]
//! sources = ["same_channel", "all_except_test"]
//!
//! [train]
//! epochs = 15
//!
//! [[channel]]
//! label = "ch1"
//! file = "ch1.trace"
//! train_fraction = 0.6
//!
//! [[channel]]
//! label = "ch5"
//! train_file = "ch5_train.trace"
//! test_file = "ch5_test.trace"
//!
//! [[channel]]
//! label = "ch9"
//! length = 200000
//! regimes = { seed = 909 }
//! ```
//!
//! A channel comes from exactly one of `file`, `train_file` plus
//! `test_file`, `generator` (an explicit Gilbert-Elliott spec) or `regimes`
//! (a seeded draw from a [`RegimeSampler`]). Relative paths resolve against
//! the directory of the config file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::benchmark::{
    RegimeSampler, BENCHMARK_CHANNELS, BENCHMARK_LENGTH, BENCHMARK_TRAIN_FRACTION,
};
use super::{ModelKind, TrainingSource};
use crate::ema::{log_sweep, SWEEP_MAX, SWEEP_MIN, SWEEP_POINTS};
use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::trace::{GeChannelSpec, DEFAULT_WINDOW};

/// Default training share when a single trace is split.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.6;

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_sources() -> Vec<TrainingSource> {
    TrainingSource::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives weight initialization and minibatch shuffling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_sources")]
    pub sources: Vec<TrainingSource>,
    /// Restricts which channels are tested; empty tests every channel.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_channels: Vec<String>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub calibration: SweepConfig,
    #[serde(rename = "channel")]
    pub channels: Vec<ChannelConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub shuffle: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr0: d.lr0,
            shuffle: d.shuffle,
        }
    }
}

/// Log-spaced candidate sweep for the smoothing factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            min: SWEEP_MIN,
            max: SWEEP_MAX,
            points: SWEEP_POINTS,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min > 0.0
            && self.max <= 1.0
            && self.min <= self.max
            && self.points >= 1
            && (self.points > 1 || self.min == self.max);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "calibration sweep needs 0 < min <= max <= 1 and points >= 1, got {self:?}"
            )))
        }
    }

    pub fn candidates(&self) -> Vec<f64> {
        if self.points == 1 {
            vec![self.min]
        } else {
            log_sweep(self.min, self.max, self.points)
        }
    }
}

/// A seeded draw from the regime sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSource {
    pub seed: u64,
    #[serde(default)]
    pub sampler: RegimeSampler,
}

/// One `[[channel]]` table as written in the file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    /// Index of the first test sample; overrides `train_fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeChannelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regimes: Option<RegimeSource>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Split {
    Fraction(f64),
    Boundary(usize),
}

/// Where a whole (unsplit) trace comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceInput {
    File(PathBuf),
    Generator { spec: GeChannelSpec, length: usize },
}

/// A channel with its source resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSource {
    /// One trace cut into training and test parts.
    Split { input: TraceInput, split: Split },
    /// Separate training and test files.
    Files { train: PathBuf, test: PathBuf },
}

impl ChannelConfig {
    pub fn is_synthetic(&self) -> bool {
        self.generator.is_some() || self.regimes.is_some()
    }

    /// Resolves the source, joining relative paths onto `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<ChannelSource> {
        let err = |m: &str| Error::Config(format!("channel {:?}: {m}", self.label));
        let given = [
            self.file.is_some(),
            self.train_file.is_some() || self.test_file.is_some(),
            self.generator.is_some(),
            self.regimes.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if given != 1 {
            return Err(err(
                "set exactly one of file, train_file/test_file, generator, regimes",
            ));
        }
        let split = match (self.boundary, self.train_fraction) {
            (Some(b), _) => Split::Boundary(b),
            (None, Some(f)) if f > 0.0 && f < 1.0 => Split::Fraction(f),
            (None, Some(f)) => return Err(err(&format!("train_fraction {f} is outside (0, 1)"))),
            (None, None) => Split::Fraction(DEFAULT_TRAIN_FRACTION),
        };
        let join = |p: &PathBuf| base_dir.join(p);
        if let (Some(train), Some(test)) = (&self.train_file, &self.test_file) {
            if self.boundary.is_some() || self.train_fraction.is_some() || self.length.is_some() {
                return Err(err("train_file/test_file take no split or length"));
            }
            return Ok(ChannelSource::Files {
                train: join(train),
                test: join(test),
            });
        }
        if self.train_file.is_some() || self.test_file.is_some() {
            return Err(err("train_file and test_file go together"));
        }
        let input = if let Some(path) = &self.file {
            if self.length.is_some() {
                return Err(err("length only applies to synthetic channels"));
            }
            TraceInput::File(join(path))
        } else if let Some(spec) = &self.generator {
            let length = self.length.ok_or_else(|| err("generator needs a length"))?;
            TraceInput::Generator {
                spec: spec.clone(),
                length,
            }
        } else {
            let r = self.regimes.as_ref().expect("counted above");
            let length = self.length.unwrap_or(BENCHMARK_LENGTH);
            TraceInput::Generator {
                spec: r.sampler.channel_spec(r.seed, length)?,
                length,
            }
        };
        Ok(ChannelSource::Split { input, split })
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    /// Canonical TOML text; what the config hash is computed over.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr0: self.train.lr0,
            seed: self.seed,
            shuffle: self.train.shuffle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("no [[channel]] entries".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.models.is_empty() || self.sources.is_empty() {
            return Err(Error::Config("models and sources must not be empty".into()));
        }
        let mut seen = HashSet::new();
        for ch in &self.channels {
            if ch.label.is_empty()
                || ch
                    .label
                    .chars()
                    .any(|c| c.is_whitespace() || c == ',' || c == '=' || c == '/')
            {
                return Err(Error::Config(format!("bad channel label {:?}", ch.label)));
            }
            if !seen.insert(ch.label.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate channel label {:?}",
                    ch.label
                )));
            }
            ch.resolve(&self.base_dir)?;
        }
        for t in &self.test_channels {
            if !seen.contains(t.as_str()) {
                return Err(Error::Config(format!(
                    "test channel {t:?} is not configured"
                )));
            }
        }
        self.calibration.validate()?;
        self.train_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Indices of the channels that get tested, in channel order.
    pub fn tested_channels(&self) -> Vec<usize> {
        (0..self.channels.len())
            .filter(|&i| {
                self.test_channels.is_empty()
                    || self.test_channels.contains(&self.channels[i].label)
            })
            .collect()
    }
}

/// The four-channel synthetic benchmark with the hourglass network and
/// the single-filter baseline trained on each channel's own history.
pub fn benchmark_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        window: DEFAULT_WINDOW,
        out: None,
        models: vec![ModelKind::Ema, ModelKind::Hourglass],
        sources: vec![TrainingSource::SameChannel],
        test_channels: Vec::new(),
        train: TrainSection::default(),
        calibration: SweepConfig::default(),
        channels: BENCHMARK_CHANNELS
            .iter()
            .map(|&(label, s)| ChannelConfig {
                label: label.to_string(),
                length: Some(BENCHMARK_LENGTH),
                train_fraction: Some(BENCHMARK_TRAIN_FRACTION),
                regimes: Some(RegimeSource {
                    seed: s,
                    sampler: RegimeSampler::default(),
                }),
                ..ChannelConfig::default()
            })
            .collect(),
        base_dir: PathBuf::new(),
    }
}
