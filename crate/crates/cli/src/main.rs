use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wcqp::ema::{build_alpha_grid, default_init_state};
use wcqp::metrics::{prediction_errors, summarize_errors};
use wcqp::nn::{build_default, load_model, save_model, train, ArchKind, Provenance, TrainConfig};
use wcqp::pipeline::config::{benchmark_config, SweepConfig};
use wcqp::pipeline::features::{
    calibrated_grid, ema_predictions, featurize_with_init, merge_training_traces, nn_predictions,
    pooled_init_state,
};
use wcqp::pipeline::report::format_alpha;
use wcqp::pipeline::{
    read_csv, render_text, run_experiment, write_csv, ChannelSource, ExperimentConfig, ModelKind,
    ReportRow, TraceInput,
};
use wcqp::trace::{generate_ge_trace, load_trace, save_trace, Trace, DEFAULT_WINDOW};
use wcqp::{Error, ErrorClass, Result};

/// Frame delivery ratio prediction from a bank of EMA filters.
///
/// Exit codes: 0 success, 1 configuration error, 2 data error,
/// 3 numerical failure.
#[derive(Parser)]
#[command(name = "wcqp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic channels of a config as trace files.
    Simulate(SimulateArgs),
    /// Find the optimal smoothing factor of a training trace.
    Calibrate(CalibrateArgs),
    /// Dump the 41 filter outputs and targets of a trace as CSV.
    Features(FeaturesArgs),
    /// Train a network on one or more traces.
    Train(TrainArgs),
    /// Write per-sample predictions of a model on a trace.
    Predict(PredictArgs),
    /// Error statistics of a model or a single filter on a test trace.
    Evaluate(EvaluateArgs),
    /// Render a stats CSV as a text table.
    Report(ReportArgs),
    /// Run a full experiment and write its result bundle.
    Run(RunArgs),
}

#[derive(Args)]
struct ConfigSource {
    /// Experiment config (TOML).
    #[arg(long, required_unless_present = "benchmark")]
    config: Option<PathBuf>,
    /// Use the built-in four-channel synthetic benchmark instead of a config.
    #[arg(long, conflicts_with = "config")]
    benchmark: bool,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(path) => ExperimentConfig::load(path),
            None => Ok(benchmark_config(0)),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Replaces the generator seed of the i-th synthetic channel by SEED + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = SweepConfig::default().min)]
    sweep_min: f64,
    #[arg(long, default_value_t = SweepConfig::default().max)]
    sweep_max: f64,
    #[arg(long, default_value_t = SweepConfig::default().points)]
    sweep_points: usize,
}

impl SweepArgs {
    fn candidates(&self) -> Result<Vec<f64>> {
        let s = SweepConfig {
            min: self.sweep_min,
            max: self.sweep_max,
            points: self.sweep_points,
        };
        s.validate()?;
        Ok(s.candidates())
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Training trace(s); several are pooled.
    #[arg(long = "trace", required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    alpha_star: f64,
    /// Initial filter state; defaults to the delivery ratio of the first
    /// WINDOW samples of the trace.
    #[arg(long)]
    init: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training trace(s); several are merged.
    #[arg(long = "trace", required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value = "hourglass")]
    arch: ArchKind,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr0)]
    lr0: f64,
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Test trace.
    #[arg(long)]
    trace: PathBuf,
    /// Trained network; its recorded grid, window and initial state are used.
    #[arg(long, required_unless_present = "alpha", conflicts_with = "alpha")]
    model: Option<PathBuf>,
    /// Evaluate a single filter with this smoothing factor instead.
    #[arg(long, requires = "init")]
    alpha: Option<f64>,
    /// Initial state of the single filter (from the training trace).
    #[arg(long)]
    init: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Stats CSV written by `run` or `evaluate`.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out`, then `./out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Trace>> {
    paths.iter().map(load_trace).collect()
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let cfg = a.source.load()?;
    create_dir(&a.out)?;
    let mut synthetic = 0;
    for ch in &cfg.channels {
        let ChannelSource::Split {
            input: TraceInput::Generator { mut spec, length },
            split,
        } = ch.resolve(&cfg.base_dir)?
        else {
            continue;
        };
        if let Some(s) = a.seed {
            spec.seed = s.wrapping_add(synthetic);
        }
        synthetic += 1;
        let trace = generate_ge_trace(&spec, length, &ch.label)?;
        let (tr, te) = match split {
            wcqp::pipeline::Split::Fraction(f) => trace.split_by_fraction(f)?,
            wcqp::pipeline::Split::Boundary(b) => trace.split_train_test(b)?,
        };
        save_trace(&trace, a.out.join(format!("{}.trace", ch.label)))?;
        save_trace(&tr, a.out.join(format!("{}_train.trace", ch.label)))?;
        save_trace(&te, a.out.join(format!("{}_test.trace", ch.label)))?;
        println!(
            "{}: {} samples, seed {}, fdr {:.4}, train {} / test {}",
            ch.label,
            trace.len(),
            spec.seed,
            trace.fdr(),
            tr.len(),
            te.len()
        );
    }
    if synthetic == 0 {
        return Err(Error::Config("config has no synthetic channels".into()));
    }
    Ok(ExitCode::SUCCESS)
}

fn calibrate(a: CalibrateArgs) -> Result<ExitCode> {
    let traces = load_all(&a.traces)?;
    let refs: Vec<&Trace> = traces.iter().collect();
    let (cal, grid) = calibrated_grid(&refs, a.window, &a.sweep.candidates()?)?;
    let init = pooled_init_state(&refs, a.window);
    let text = format!(
        "alpha_star={:.16e}\nmse={:.16e}\ninit_state={:.16e}\nalpha_grid={}\n",
        cal.alpha_star,
        cal.mse,
        init,
        grid.alphas()
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    println!(
        "{}  mse={:.4e}  init_state={init:.6}",
        format_alpha(cal.alpha_star),
        cal.mse
    );
    if let Some(out) = a.out {
        create_dir(&out)?;
        write_text(&out.join("calibration.txt"), &text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn features(a: FeaturesArgs) -> Result<ExitCode> {
    let trace = load_trace(&a.trace)?;
    let grid = build_alpha_grid(a.alpha_star)?;
    let init = a
        .init
        .unwrap_or_else(|| default_init_state(&trace, a.window));
    let data = featurize_with_init(&trace, &grid, a.window, init)?;
    create_dir(&a.out)?;
    let path = a.out.join("features.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["index".to_string()];
    header.extend(grid.alphas().iter().map(|v| format!("ema_{v:e}")));
    header.push("target".into());
    w.write_record(&header)?;
    let start = data.features().start_index();
    for (i, (row, t)) in data.features().iter_rows().zip(data.targets()).enumerate() {
        let mut rec = vec![(start + i).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        rec.push(t.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    println!("{} rows written to {}", data.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let traces = load_all(&a.traces)?;
    let refs: Vec<&Trace> = traces.iter().collect();
    let (cal, grid) = calibrated_grid(&refs, a.window, &a.sweep.candidates()?)?;
    let init_state = pooled_init_state(&refs, a.window);
    let data = merge_training_traces(&refs, &grid, a.window)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr0: a.lr0,
        seed: a.seed,
        shuffle: true,
    };
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let (mut model, report) = train(build_default(a.arch, a.seed)?, &data, &cfg)?;
    model.set_provenance(Provenance {
        grid,
        init_state,
        window: a.window,
    });
    create_dir(&a.out)?;
    let path = a.out.join(format!("{}.model", a.arch));
    save_model(&model, &path)?;
    let mut log = String::from("epoch,learning_rate,train_mse\n");
    for (e, (lr, loss)) in report
        .lr_history
        .iter()
        .zip(&report.loss_history)
        .enumerate()
    {
        log.push_str(&format!("{},{lr},{loss}\n", e + 1));
    }
    write_text(&a.out.join("train_log.csv"), &log)?;
    println!(
        "{}  rows={}  final train mse={:.4e}  -> {}",
        format_alpha(cal.alpha_star),
        data.len(),
        report.loss_history.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn model_provenance(path: &Path) -> Result<(wcqp::nn::MlpModel, Provenance)> {
    let model = load_model(path)?;
    let prov = model.provenance().cloned().ok_or_else(|| {
        Error::Config(format!(
            "{}: model has no alpha grid or initial state recorded",
            path.display()
        ))
    })?;
    Ok((model, prov))
}

fn predict(a: PredictArgs) -> Result<ExitCode> {
    let (model, prov) = model_provenance(&a.model)?;
    let trace = load_trace(&a.trace)?;
    let data = featurize_with_init(&trace, &prov.grid, prov.window, prov.init_state)?;
    let preds = model.predict_series(data.features())?;
    create_dir(&a.out)?;
    let mut text = String::from("index,prediction,target\n");
    let start = data.features().start_index();
    for (i, (p, t)) in preds.iter().zip(data.targets()).enumerate() {
        text.push_str(&format!("{},{p},{t}\n", start + i));
    }
    let path = a.out.join("predictions.csv");
    write_text(&path, &text)?;
    println!("{} predictions written to {}", preds.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let trace = load_trace(&a.trace)?;
    let (model_kind, alpha_star, preds, targets) = match &a.model {
        Some(path) => {
            let (model, prov) = model_provenance(path)?;
            let kind = match model.arch() {
                ArchKind::Pyramid => ModelKind::Pyramid,
                _ => ModelKind::Hourglass,
            };
            let (p, t) = nn_predictions(&model, &trace, &prov.grid, prov.window, prov.init_state)?;
            (kind, prov.grid.alpha_star(), p, t)
        }
        None => {
            let alpha = a.alpha.expect("clap requires model or alpha");
            let init = a.init.expect("clap requires init with alpha");
            let (p, t) = ema_predictions(&trace, alpha, a.window, init)?;
            (ModelKind::Ema, alpha, p, t)
        }
    };
    let stats = summarize_errors(&prediction_errors(&preds, &targets)?)?;
    let row = ReportRow {
        test_channel: trace.channel_label().to_string(),
        model: model_kind,
        training_channel: "-".into(),
        alpha_star,
        stats,
    };
    print!("{}", render_text(std::slice::from_ref(&row))?);
    if let Some(out) = a.out {
        create_dir(&out)?;
        let path = out.join("stats.csv");
        let file = fs::File::create(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        write_csv(&[row], file)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn report(a: ReportArgs) -> Result<ExitCode> {
    let file = fs::File::open(&a.csv).map_err(|e| Error::Io {
        path: a.csv.clone(),
        source: e,
    })?;
    let rows = read_csv(file, &a.csv)?;
    let text = render_text(&rows)?;
    print!("{text}");
    if let Some(out) = a.out {
        create_dir(&out)?;
        write_text(&out.join("report.txt"), &text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = a.source.load()?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let out = a
        .out
        .or_else(|| cfg.out.as_ref().map(|o| cfg.base_dir.join(o)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let result = run_experiment(&cfg, &out)?;
    let rows = result.rows();
    let mut stdout = std::io::stdout().lock();
    if !rows.is_empty() {
        let _ = write!(stdout, "{}", render_text(&rows)?);
    }
    let mut worst: Option<ErrorClass> = None;
    for c in result.failures() {
        if let wcqp::pipeline::CellOutcome::Failed { class, message } = &c.outcome {
            eprintln!("cell {} failed: {message}", c.spec);
            worst.get_or_insert(*class);
        }
    }
    let _ = writeln!(
        stdout,
        "{} of {} cells ok; bundle in {} (config sha256 {})",
        rows.len(),
        result.cells.len(),
        out.display(),
        result.config_sha256
    );
    Ok(match worst {
        None => ExitCode::SUCCESS,
        Some(class) => ExitCode::from(exit_code(class)),
    })
}
