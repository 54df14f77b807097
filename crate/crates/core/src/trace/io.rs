//! Text trace files.
//!
//! ```text
//! # sample_period_s=0.5
//! # channel_label=ch1
//! # origin=synthetic
//! # seed=42
//! 1
//! 0
//! ```
//!
//! Header lines come first; the body holds one `0` or `1` per LF-terminated
//! line. `seed` is optional. Blank lines are ignored.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Origin, Trace, DEFAULT_SAMPLE_PERIOD_S};
use crate::error::{Error, Result};

pub fn write_trace<W: Write>(trace: &Trace, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# sample_period_s={}", trace.sample_period_s())?;
    writeln!(out, "# channel_label={}", trace.channel_label())?;
    writeln!(out, "# origin={}", trace.origin())?;
    if let Some(seed) = trace.seed() {
        writeln!(out, "# seed={seed}")?;
    }
    for &x in trace.outcomes() {
        out.write_all(if x == 1 { b"1\n" } else { b"0\n" })?;
    }
    out.flush()
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(trace, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(BufReader::new(file), path)
}

/// Parses a trace from any reader; `path` is only used in error messages.
pub fn read_trace<R: Read>(reader: R, path: impl Into<PathBuf>) -> Result<Trace> {
    let path = path.into();
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.clone(),
        line,
        reason,
    };

    let mut period = DEFAULT_SAMPLE_PERIOD_S;
    let mut label: Option<String> = None;
    let mut origin = Origin::Measured;
    let mut seed = None;
    let mut outcomes = Vec::new();

    for (idx, line) in BufReader::new(reader).split(b'\n').enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path.clone(), e))?;
        match line.as_slice() {
            b"" => {}
            b"0" => outcomes.push(0),
            b"1" => outcomes.push(1),
            [b'#', rest @ ..] => {
                if !outcomes.is_empty() {
                    return Err(parse_err(lineno, "header line after trace body".into()));
                }
                let text = std::str::from_utf8(rest)
                    .map_err(|_| parse_err(lineno, "header is not UTF-8".into()))?
                    .trim();
                let (key, value) = text.split_once('=').ok_or_else(|| {
                    parse_err(lineno, format!("expected key=value, got {text:?}"))
                })?;
                match key.trim() {
                    "sample_period_s" => {
                        period = value.trim().parse().map_err(|_| {
                            parse_err(lineno, format!("bad sample_period_s {value:?}"))
                        })?
                    }
                    "channel_label" => label = Some(value.trim().to_string()),
                    "origin" => origin = value.trim().parse().map_err(|e| parse_err(lineno, e))?,
                    "seed" => {
                        seed = Some(
                            value
                                .trim()
                                .parse()
                                .map_err(|_| parse_err(lineno, format!("bad seed {value:?}")))?,
                        )
                    }
                    other => {
                        return Err(parse_err(lineno, format!("unknown header key {other:?}")))
                    }
                }
            }
            other => {
                return Err(parse_err(
                    lineno,
                    format!(
                        "expected '0' or '1', got {:?}",
                        String::from_utf8_lossy(other)
                    ),
                ))
            }
        }
    }
    if outcomes.is_empty() {
        return Err(parse_err(0, "trace body is empty".into()));
    }
    let label = label.unwrap_or_else(|| {
        path.file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("trace")
            .to_string()
    });
    Ok(Trace::new(outcomes, period, label, origin)?.with_seed(seed))
}
