//! Versioned text model files.
//!
//! One `key=value` pair per line, in this order: `format_version`, the
//! architecture block (`arch`, `input_width`, `layers`, then one
//! `layer.J=WIDTH ACTIVATION` per layer), the optional feature provenance
//! block (`alpha_star`, `init_state`, `window`, `alpha_grid`), then
//! `weights.J` and `biases.J` for each layer. Arrays are space-separated,
//! weights row-major `(fan_in, fan_out)`, every real printed with 17
//! significant digits so values survive a round trip bit for bit. Lines
//! starting with `#` are comments.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Activation, ArchKind, Layer, LayerSpec, MlpModel, Provenance};
use crate::ema::AlphaGrid;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

struct Real(f64);

impl std::fmt::Display for Real {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.16e}", self.0)
    }
}

fn write_array<W: Write>(out: &mut W, key: &str, values: &[f64]) -> std::io::Result<()> {
    write!(out, "{key}=")?;
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.write_all(b" ")?;
        }
        write!(out, "{}", Real(*v))?;
    }
    out.write_all(b"\n")
}

pub fn write_model<W: Write>(model: &MlpModel, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# wcqp model")?;
    writeln!(out, "format_version={FORMAT_VERSION}")?;
    writeln!(out, "arch={}", model.arch())?;
    writeln!(out, "input_width={}", model.input_width())?;
    writeln!(out, "layers={}", model.layers().len())?;
    for (j, layer) in model.layers().iter().enumerate() {
        writeln!(out, "layer.{j}={} {}", layer.fan_out, layer.activation)?;
    }
    if let Some(p) = model.provenance() {
        writeln!(out, "alpha_star={}", Real(p.grid.alpha_star()))?;
        writeln!(out, "init_state={}", Real(p.init_state))?;
        writeln!(out, "window={}", p.window)?;
        write_array(&mut out, "alpha_grid", p.grid.alphas())?;
    }
    for (j, layer) in model.layers().iter().enumerate() {
        write_array(&mut out, &format!("weights.{j}"), &layer.weights)?;
        write_array(&mut out, &format!("biases.{j}"), &layer.biases)?;
    }
    out.flush()
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(model, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(file, path)
}

struct Entries {
    path: PathBuf,
    map: HashMap<String, (usize, String)>,
}

impl Entries {
    fn parse_err(&self, line: usize, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            reason: reason.into(),
        }
    }

    fn take(&mut self, key: &str) -> Result<(usize, String)> {
        self.map
            .remove(key)
            .ok_or_else(|| self.parse_err(0, format!("missing key {key:?}")))
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (line, value) = self.take(key)?;
        value
            .parse()
            .map_err(|_| self.parse_err(line, format!("bad value for {key}: {value:?}")))
    }

    fn take_reals(&mut self, key: &str) -> Result<Vec<f64>> {
        let (line, value) = self.take(key)?;
        value
            .split_ascii_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.parse_err(line, format!("bad real {tok:?} in {key}")))
            })
            .collect()
    }
}

/// Parses a model; `path` is only used in error messages.
pub fn read_model<R: Read>(mut reader: R, path: impl Into<PathBuf>) -> Result<MlpModel> {
    let path = path.into();
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path.clone(), e))?;

    let mut entries = Entries {
        path: path.clone(),
        map: HashMap::new(),
    };
    let mut first_key = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| entries.parse_err(line, format!("expected key=value, got {raw:?}")))?;
        first_key.get_or_insert_with(|| key.to_string());
        if entries
            .map
            .insert(key.to_string(), (line, value.to_string()))
            .is_some()
        {
            return Err(entries.parse_err(line, format!("duplicate key {key:?}")));
        }
    }

    let (version_line, version) = entries.take("format_version")?;
    if first_key.as_deref() != Some("format_version") {
        return Err(entries.parse_err(version_line, "format_version must come first"));
    }
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::VersionMismatch {
            path,
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let arch: ArchKind = {
        let (line, v) = entries.take("arch")?;
        v.parse()
            .map_err(|_| entries.parse_err(line, format!("unknown arch {v:?}")))?
    };
    let input_width: usize = entries.take_parsed("input_width")?;
    let depth: usize = entries.take_parsed("layers")?;
    let shape_err = |reason: String| Error::ShapeInconsistency {
        path: path.clone(),
        reason,
    };

    let mut specs = Vec::with_capacity(depth);
    for j in 0..depth {
        let key = format!("layer.{j}");
        let (line, v) = entries
            .take(&key)
            .map_err(|_| shape_err(format!("layers={depth} but {key} is missing")))?;
        let (w, act) = v.split_once(' ').ok_or_else(|| {
            entries.parse_err(line, format!("expected WIDTH ACTIVATION, got {v:?}"))
        })?;
        let width = w
            .parse()
            .map_err(|_| entries.parse_err(line, format!("bad width {w:?}")))?;
        let activation: Activation = act
            .trim()
            .parse()
            .map_err(|_| entries.parse_err(line, format!("bad activation {act:?}")))?;
        specs.push(LayerSpec::new(width, activation));
    }

    let provenance = if entries.map.contains_key("alpha_star") {
        let alpha_star: f64 = entries.take_parsed("alpha_star")?;
        let init_state: f64 = entries.take_parsed("init_state")?;
        let window: usize = entries.take_parsed("window")?;
        let alphas = entries.take_reals("alpha_grid")?;
        let grid = AlphaGrid::from_parts(alpha_star, alphas)
            .map_err(|e| shape_err(format!("alpha_grid: {e}")))?;
        Some(Provenance {
            grid,
            init_state,
            window,
        })
    } else {
        None
    };

    let mut layers = Vec::with_capacity(depth);
    let mut fan_in = input_width;
    for (j, spec) in specs.iter().enumerate() {
        let weights = entries.take_reals(&format!("weights.{j}"))?;
        let biases = entries.take_reals(&format!("biases.{j}"))?;
        if weights.len() != fan_in * spec.width {
            return Err(shape_err(format!(
                "weights.{j} holds {} values, shape {fan_in}x{} needs {}",
                weights.len(),
                spec.width,
                fan_in * spec.width
            )));
        }
        if biases.len() != spec.width {
            return Err(shape_err(format!(
                "biases.{j} holds {} values, layer width is {}",
                biases.len(),
                spec.width
            )));
        }
        layers.push(Layer {
            fan_in,
            fan_out: spec.width,
            activation: spec.activation,
            weights,
            biases,
        });
        fan_in = spec.width;
    }

    if let Some((key, (line, _))) = entries.map.iter().min_by_key(|(_, (l, _))| *l) {
        return Err(entries.parse_err(*line, format!("unexpected key {key:?}")));
    }

    MlpModel::from_layers(input_width, layers, arch, provenance)
        .map_err(|e| shape_err(e.to_string()))
}
