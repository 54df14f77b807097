//! Running a full experiment and writing its result bundle.
//!
//! Bundle layout under the output directory:
//!
//! - `stats.csv`: one row per successful cell, raw fractions.
//! - `report.txt`: the same rows as an aligned table.
//! - `manifest.toml`: config hash, seed, and per cell the training channels,
//!   `alpha*`, initial filter state, model file and status.
//! - `models/`: one model file per trained (model kind, training set).
//! - `traces/`: training and test splits of every synthetic channel used.
//!
//! Traces are loaded only when a cell needs them, so a cell never depends on
//! a file it does not read. Calibrations and trained networks are shared by
//! every cell with the same training set.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ChannelSource, ExperimentConfig, Split, TraceInput};
use super::features::{
    calibrated_grid, ema_predictions, merge_training_traces, nn_predictions, pooled_init_state,
};
use super::report::{render_text, write_csv, ReportRow};
use super::{ModelKind, ScenarioSpec, TrainingSource};
use crate::error::{Error, ErrorClass, Result};
use crate::metrics::{prediction_errors, summarize_errors, ErrorStats, PERCENTILE_CONVENTION};
use crate::nn::{build_default, save_model, train, ArchKind, Provenance};
use crate::trace::{generate_ge_trace, load_trace, write_trace, Trace};

/// How multi-channel training sets are assembled; recorded in the manifest.
pub const MERGE_POLICY: &str =
    "per-trace featurization, then concatenation of scored rows in channel order";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Part {
    Train,
    Test,
}

impl Part {
    fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Test => "test",
        }
    }
}

/// Lazily loaded channel splits.
struct TraceStore<'a> {
    cfg: &'a ExperimentConfig,
    cache: HashMap<(usize, Part), Rc<Trace>>,
}

impl<'a> TraceStore<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        TraceStore {
            cfg,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, idx: usize, part: Part) -> Result<Rc<Trace>> {
        if let Some(t) = self.cache.get(&(idx, part)) {
            return Ok(Rc::clone(t));
        }
        let ch = &self.cfg.channels[idx];
        match ch.resolve(&self.cfg.base_dir)? {
            ChannelSource::Files { train, test } => {
                let path = if part == Part::Train { train } else { test };
                let t = Rc::new(relabel(load_trace(path)?, &ch.label));
                self.cache.insert((idx, part), Rc::clone(&t));
                Ok(t)
            }
            ChannelSource::Split { input, split } => {
                let whole = match input {
                    TraceInput::File(path) => relabel(load_trace(path)?, &ch.label),
                    TraceInput::Generator { spec, length } => {
                        generate_ge_trace(&spec, length, &ch.label)?
                    }
                };
                let (train, test) = match split {
                    Split::Fraction(f) => whole.split_by_fraction(f)?,
                    Split::Boundary(b) => whole.split_train_test(b)?,
                };
                self.cache.insert((idx, Part::Train), Rc::new(train));
                self.cache.insert((idx, Part::Test), Rc::new(test));
                Ok(Rc::clone(&self.cache[&(idx, part)]))
            }
        }
    }
}

fn relabel(trace: Trace, label: &str) -> Trace {
    if trace.channel_label() == label {
        return trace;
    }
    let seed = trace.seed();
    Trace::new(
        trace.outcomes().to_vec(),
        trace.sample_period_s(),
        label,
        trace.origin(),
    )
    .expect("label was validated with the config")
    .with_seed(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Ok(ErrorStats),
    Failed { class: ErrorClass, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub spec: ScenarioSpec,
    pub training_channels: Vec<String>,
    /// Absent when calibration itself failed.
    pub alpha_star: Option<f64>,
    pub calibration_mse: Option<f64>,
    pub init_state: Option<f64>,
    pub model_file: Option<String>,
    pub train_rows: Option<usize>,
    pub final_train_loss: Option<f64>,
    pub outcome: CellOutcome,
}

impl CellResult {
    pub fn stats(&self) -> Option<&ErrorStats> {
        match &self.outcome {
            CellOutcome::Ok(s) => Some(s),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    pub config_sha256: String,
    pub out_dir: PathBuf,
}

impl ExperimentResult {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.cells
            .iter()
            .filter_map(|c| {
                Some(ReportRow {
                    test_channel: c.spec.test_channel.clone(),
                    model: c.spec.model_kind,
                    training_channel: c.spec.training_source.column_label(&c.spec.test_channel),
                    alpha_star: c.alpha_star?,
                    stats: *c.stats()?,
                })
            })
            .collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.stats().is_none())
    }

    pub fn cell(
        &self,
        test: &str,
        source: TrainingSource,
        model: ModelKind,
    ) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.spec.test_channel == test
                && c.spec.training_source == source
                && c.spec.model_kind == model
        })
    }
}

#[derive(Debug, Clone)]
struct Calibrated {
    alpha_star: f64,
    mse: f64,
    grid: crate::ema::AlphaGrid,
    init_state: f64,
}

#[derive(Debug, Clone)]
struct Trained {
    model: crate::nn::MlpModel,
    file: String,
    rows: usize,
    final_loss: f64,
}

fn set_name(cfg: &ExperimentConfig, set: &[usize]) -> String {
    if set.len() == cfg.channels.len() && set.len() > 1 {
        return "all".to_string();
    }
    let labels: Vec<&str> = set
        .iter()
        .map(|&i| cfg.channels[i].label.as_str())
        .collect();
    labels.join("+")
}

/// A cell failure as recorded: errors are not `Clone`, cached ones are
/// replayed by class and message.
type Failure = (ErrorClass, String);

fn failure(e: Error) -> Failure {
    (e.class(), e.to_string())
}

fn stats_of(preds: &[f64], targets: &[f64]) -> Result<ErrorStats> {
    summarize_errors(&prediction_errors(preds, targets)?)
}

fn training_traces(store: &mut TraceStore<'_>, set: &[usize]) -> Result<Vec<Rc<Trace>>> {
    if set.is_empty() {
        return Err(Error::Empty("training channels"));
    }
    set.iter().map(|&i| store.get(i, Part::Train)).collect()
}

fn calibrate_set(
    cfg: &ExperimentConfig,
    store: &mut TraceStore<'_>,
    set: &[usize],
    candidates: &[f64],
) -> Result<Calibrated> {
    let traces = training_traces(store, set)?;
    let refs: Vec<&Trace> = traces.iter().map(|t| t.as_ref()).collect();
    let (c, grid) = calibrated_grid(&refs, cfg.window, candidates)?;
    Ok(Calibrated {
        alpha_star: c.alpha_star,
        mse: c.mse,
        grid,
        init_state: pooled_init_state(&refs, cfg.window),
    })
}

fn train_set(
    cfg: &ExperimentConfig,
    store: &mut TraceStore<'_>,
    set: &[usize],
    cal: &Calibrated,
    arch: ArchKind,
    out_dir: &Path,
    file: String,
) -> Result<Trained> {
    let traces = training_traces(store, set)?;
    let refs: Vec<&Trace> = traces.iter().map(|t| t.as_ref()).collect();
    let data = merge_training_traces(&refs, &cal.grid, cfg.window)?;
    let (mut model, report) = train(build_default(arch, cfg.seed)?, &data, &cfg.train_config())?;
    model.set_provenance(Provenance {
        grid: cal.grid.clone(),
        init_state: cal.init_state,
        window: cfg.window,
    });
    save_model(&model, out_dir.join(&file))?;
    Ok(Trained {
        model,
        file,
        rows: data.len(),
        final_loss: *report.loss_history.last().expect("epochs >= 1"),
    })
}

/// Runs every configured cell and writes the bundle to `out_dir`.
///
/// Cell failures are recorded in the result and the manifest; only
/// configuration errors and failures to write the bundle return `Err`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentResult> {
    cfg.validate()?;
    let config_text = cfg.to_toml()?;
    let config_sha256 = hex::encode(Sha256::digest(config_text.as_bytes()));
    let models_dir = out_dir.join("models");
    fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;

    let n = cfg.channels.len();
    let candidates = cfg.calibration.candidates();
    let mut store = TraceStore::new(cfg);
    let mut calibrations: HashMap<Vec<usize>, std::result::Result<Calibrated, Failure>> =
        HashMap::new();
    let mut networks: HashMap<(Vec<usize>, ModelKind), std::result::Result<Trained, Failure>> =
        HashMap::new();

    let mut sources = cfg.sources.clone();
    sources.sort();
    sources.dedup();
    let mut models = cfg.models.clone();
    models.sort();
    models.dedup();

    let mut cells = Vec::new();
    for test in cfg.tested_channels() {
        for &source in &sources {
            let set = source.training_channels(test, n);
            for &model_kind in &models {
                let spec = ScenarioSpec {
                    test_channel: cfg.channels[test].label.clone(),
                    training_source: source,
                    model_kind,
                };
                let mut cell = CellResult {
                    spec,
                    training_channels: set.iter().map(|&i| cfg.channels[i].label.clone()).collect(),
                    alpha_star: None,
                    calibration_mse: None,
                    init_state: None,
                    model_file: None,
                    train_rows: None,
                    final_train_loss: None,
                    outcome: CellOutcome::Failed {
                        class: ErrorClass::Data,
                        message: String::new(),
                    },
                };

                let cal = calibrations.entry(set.clone()).or_insert_with(|| {
                    calibrate_set(cfg, &mut store, &set, &candidates).map_err(failure)
                });
                let cal = match cal {
                    Ok(c) => c.clone(),
                    Err((class, message)) => {
                        cell.outcome = CellOutcome::Failed {
                            class: *class,
                            message: message.clone(),
                        };
                        cells.push(cell);
                        continue;
                    }
                };
                cell.alpha_star = Some(cal.alpha_star);
                cell.calibration_mse = Some(cal.mse);
                cell.init_state = Some(cal.init_state);

                let scored = match model_kind.arch() {
                    None => store
                        .get(test, Part::Test)
                        .and_then(|t| {
                            let (p, tg) =
                                ema_predictions(&t, cal.alpha_star, cfg.window, cal.init_state)?;
                            stats_of(&p, &tg)
                        })
                        .map_err(failure),
                    Some(arch) => {
                        let trained =
                            networks
                                .entry((set.clone(), model_kind))
                                .or_insert_with(|| {
                                    let file = format!(
                                        "models/{}_{}.model",
                                        model_kind,
                                        set_name(cfg, &set)
                                    );
                                    train_set(cfg, &mut store, &set, &cal, arch, out_dir, file)
                                        .map_err(failure)
                                });
                        match trained {
                            Ok(tr) => {
                                cell.model_file = Some(tr.file.clone());
                                cell.train_rows = Some(tr.rows);
                                cell.final_train_loss = Some(tr.final_loss);
                                store
                                    .get(test, Part::Test)
                                    .and_then(|t| {
                                        let (p, tg) = nn_predictions(
                                            &tr.model,
                                            &t,
                                            &cal.grid,
                                            cfg.window,
                                            cal.init_state,
                                        )?;
                                        stats_of(&p, &tg)
                                    })
                                    .map_err(failure)
                            }
                            Err(f) => Err(f.clone()),
                        }
                    }
                };
                cell.outcome = match scored {
                    Ok(s) => CellOutcome::Ok(s),
                    Err((class, message)) => CellOutcome::Failed { class, message },
                };
                cells.push(cell);
            }
        }
    }

    let result = ExperimentResult {
        cells,
        config_sha256,
        out_dir: out_dir.to_path_buf(),
    };
    write_bundle(cfg, &result, &store, out_dir)?;
    Ok(result)
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_sha256: &'a str,
    seed: u64,
    window: usize,
    merge_policy: &'static str,
    percentile_convention: &'static str,
    traces: Vec<TraceEntry>,
    cells: Vec<ManifestCell<'a>>,
}

#[derive(Serialize)]
struct TraceEntry {
    channel: String,
    part: &'static str,
    samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    generator_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
}

#[derive(Serialize)]
struct ManifestCell<'a> {
    test_channel: &'a str,
    training_source: &'static str,
    model: &'static str,
    training_channels: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_state: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_file: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu_e2: Option<f64>,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_bundle(
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
    store: &TraceStore<'_>,
    out_dir: &Path,
) -> Result<()> {
    let mut trace_entries = Vec::new();
    let loaded: BTreeMap<_, _> = store.cache.iter().collect();
    let traces_dir = out_dir.join("traces");
    for (&(idx, part), trace) in loaded {
        let ch = &cfg.channels[idx];
        let file = if ch.is_synthetic() {
            fs::create_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;
            let name = format!("traces/{}_{}.trace", ch.label, part.as_str());
            let mut bytes = Vec::new();
            write_trace(trace, &mut bytes).map_err(|e| Error::io(&name, e))?;
            write_file(&out_dir.join(&name), &bytes)?;
            Some(name)
        } else {
            None
        };
        trace_entries.push(TraceEntry {
            channel: ch.label.clone(),
            part: part.as_str(),
            samples: trace.len(),
            generator_seed: trace.seed(),
            file,
        });
    }

    let cells = result
        .cells
        .iter()
        .map(|c| {
            let (status, error) = match &c.outcome {
                CellOutcome::Ok(_) => ("ok", None),
                CellOutcome::Failed { message, .. } => ("failed", Some(message.as_str())),
            };
            ManifestCell {
                test_channel: &c.spec.test_channel,
                training_source: c.spec.training_source.as_str(),
                model: c.spec.model_kind.as_str(),
                training_channels: &c.training_channels,
                alpha_star: c.alpha_star,
                calibration_mse: c.calibration_mse,
                init_state: c.init_state,
                model_file: c.model_file.as_deref(),
                train_rows: c.train_rows,
                final_train_loss: c.final_train_loss,
                mu_e2: c.stats().map(|s| s.mu_e2),
                status,
                error,
            }
        })
        .collect();
    let manifest = Manifest {
        config_sha256: &result.config_sha256,
        seed: cfg.seed,
        window: cfg.window,
        merge_policy: MERGE_POLICY,
        percentile_convention: PERCENTILE_CONVENTION,
        traces: trace_entries,
        cells,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out_dir.join("manifest.toml"), text.as_bytes())?;
    write_file(&out_dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;

    let rows = result.rows();
    let csv_path = out_dir.join("stats.csv");
    let report_path = out_dir.join("report.txt");
    if rows.is_empty() {
        // Nothing succeeded; stale outputs from an earlier run would mislead.
        for p in [&csv_path, &report_path] {
            if p.exists() {
                fs::remove_file(p).map_err(|e| Error::io(p, e))?;
            }
        }
        return Ok(());
    }
    let mut csv_bytes = Vec::new();
    write_csv(&rows, &mut csv_bytes)?;
    write_file(&csv_path, &csv_bytes)?;
    write_file(&report_path, render_text(&rows)?.as_bytes())
}
