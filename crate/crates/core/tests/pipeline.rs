use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use tempfile::tempdir;

use wcqp::ema::default_init_state;
use wcqp::metrics::{prediction_errors, summarize_errors};
use wcqp::nn::load_model;
use wcqp::pipeline::benchmark::RegimeSampler;
use wcqp::pipeline::features::{calibrate_traces, ema_predictions};
use wcqp::pipeline::{
    read_csv, run_experiment, ChannelSource, ExperimentConfig, ModelKind, TraceInput,
    TrainingSource,
};
use wcqp::trace::{generate_ge_trace, save_trace};
use wcqp::ErrorClass;

const SMALL: &str = r#"
seed = 3
window = 600

[train]
epochs = 2

[calibration]
points = 21

[[channel]]
label = "a"
length = 16000
regimes = { seed = 1, sampler = { min_regime_len = 3000, max_regime_len = 6000 } }

[[channel]]
label = "b"
length = 16000
regimes = { seed = 2, sampler = { min_regime_len = 3000, max_regime_len = 6000 } }

[[channel]]
label = "c"
length = 16000
regimes = { seed = 3, sampler = { min_regime_len = 3000, max_regime_len = 6000 } }

[[channel]]
label = "d"
length = 16000
regimes = { seed = 4, sampler = { min_regime_len = 3000, max_regime_len = 6000 } }
"#;

fn small(base: &Path) -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL, base).unwrap()
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn full_grid_has_every_cell_in_table_order() {
    let dir = tempdir().unwrap();
    let res = run_experiment(&small(dir.path()), dir.path()).unwrap();
    assert_eq!(res.cells.len(), 36);
    assert_eq!(res.failures().count(), 0);

    let mut expected = Vec::new();
    for t in ["a", "b", "c", "d"] {
        for s in TrainingSource::ALL {
            for m in ModelKind::ALL {
                expected.push((t.to_string(), s, m));
            }
        }
    }
    let got: Vec<_> = res
        .cells
        .iter()
        .map(|c| {
            (
                c.spec.test_channel.clone(),
                c.spec.training_source,
                c.spec.model_kind,
            )
        })
        .collect();
    assert_eq!(got, expected);

    let rows = read_csv(
        fs::File::open(dir.path().join("stats.csv")).unwrap(),
        "stats.csv",
    )
    .unwrap();
    assert_eq!(rows, res.rows());
    let labels: Vec<&str> = rows[..9]
        .iter()
        .map(|r| r.training_channel.as_str())
        .collect();
    assert_eq!(labels[0], "a");
    assert_eq!(labels[3], "all");
    assert_eq!(labels[6], "all-but-a");

    // Networks are shared between cells with the same training set.
    let models = fs::read_dir(dir.path().join("models")).unwrap().count();
    assert_eq!(models, 2 * (4 + 1 + 4));
    let m = load_model(dir.path().join("models/hourglass_all.model")).unwrap();
    let prov = m.provenance().unwrap();
    assert_eq!(prov.window, 600);
    let cell = res
        .cell("b", TrainingSource::AllChannels, ModelKind::Hourglass)
        .unwrap();
    assert_eq!(Some(prov.grid.alpha_star()), cell.alpha_star);
    assert_eq!(Some(prov.init_state), cell.init_state);
    assert_eq!(cell.training_channels, ["a", "b", "c", "d"]);

    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("all-but-d"));
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains(&res.config_sha256));
    assert_eq!(manifest.matches("status = \"ok\"").count(), 36);
}

#[test]
fn reruns_write_identical_bundles() {
    let base = tempdir().unwrap();
    let mut cfg = small(base.path());
    cfg.channels.truncate(2);
    cfg.sources = vec![TrainingSource::SameChannel, TrainingSource::AllChannels];
    let (x, y) = (base.path().join("x"), base.path().join("y"));
    let a = run_experiment(&cfg, &x).unwrap();
    let b = run_experiment(&cfg, &y).unwrap();
    assert_eq!(a.cells, b.cells);
    assert_eq!(a.config_sha256, b.config_sha256);
    assert_eq!(read_tree(&x), read_tree(&y));

    cfg.seed += 1;
    let c = run_experiment(&cfg, &base.path().join("z")).unwrap();
    assert_ne!(c.config_sha256, a.config_sha256);
}

#[test]
fn ema_row_matches_direct_computation() {
    let dir = tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.models = vec![ModelKind::Ema];
    cfg.sources = vec![TrainingSource::SameChannel];
    let res = run_experiment(&cfg, dir.path()).unwrap();

    let ChannelSource::Split {
        input: TraceInput::Generator { spec, length },
        ..
    } = cfg.channels[2].resolve(dir.path()).unwrap()
    else {
        panic!("expected a generated channel");
    };
    let whole = generate_ge_trace(&spec, length, "c").unwrap();
    let (train, test) = whole.split_by_fraction(0.6).unwrap();
    let cal = calibrate_traces(&[&train], 600, &cfg.calibration.candidates()).unwrap();
    let init = default_init_state(&train, 600);
    let (p, t) = ema_predictions(&test, cal.alpha_star, 600, init).unwrap();
    let direct = summarize_errors(&prediction_errors(&p, &t).unwrap()).unwrap();

    let cell = res
        .cell("c", TrainingSource::SameChannel, ModelKind::Ema)
        .unwrap();
    assert_eq!(cell.alpha_star, Some(cal.alpha_star));
    assert_eq!(cell.stats(), Some(&direct));
}

#[test]
fn missing_file_fails_only_its_cells() {
    let dir = tempdir().unwrap();
    let sampler = RegimeSampler {
        min_regime_len: 3000,
        max_regime_len: 6000,
        ..RegimeSampler::default()
    };
    let spec = sampler.channel_spec(8, 12_000).unwrap();
    save_trace(
        &generate_ge_trace(&spec, 12_000, "x").unwrap(),
        dir.path().join("good.trace"),
    )
    .unwrap();
    let text = r#"
window = 600
models = ["ema", "pyramid"]
sources = ["same_channel", "all_channels"]
[train]
epochs = 1
[[channel]]
label = "good"
file = "good.trace"
boundary = 7000
[[channel]]
label = "gone"
file = "missing.trace"
"#;
    let cfg = ExperimentConfig::from_toml(text, dir.path()).unwrap();
    let out = dir.path().join("out");
    let res = run_experiment(&cfg, &out).unwrap();
    assert_eq!(res.cells.len(), 8);
    let ok: Vec<_> = res.cells.iter().filter(|c| c.stats().is_some()).collect();
    assert_eq!(ok.len(), 2);
    assert!(ok
        .iter()
        .all(|c| c.spec.test_channel == "good"
            && c.spec.training_source == TrainingSource::SameChannel));
    for c in res.failures() {
        match &c.outcome {
            wcqp::pipeline::CellOutcome::Failed { class, message } => {
                assert_eq!(*class, ErrorClass::Data);
                assert!(message.contains("missing.trace"), "{message}");
            }
            _ => unreachable!(),
        }
    }
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert_eq!(manifest.matches("status = \"failed\"").count(), 6);
    assert_eq!(
        read_csv(fs::File::open(out.join("stats.csv")).unwrap(), "")
            .unwrap()
            .len(),
        2
    );
}

#[test]
fn short_trace_is_a_data_failure() {
    let dir = tempdir().unwrap();
    let text = r#"
window = 600
models = ["ema"]
sources = ["same_channel"]
[[channel]]
label = "tiny"
length = 1500
regimes = { seed = 5 }
"#;
    let cfg = ExperimentConfig::from_toml(text, dir.path()).unwrap();
    let res = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(res.failures().count(), 1);
    assert!(!dir.path().join("stats.csv").exists());
}
