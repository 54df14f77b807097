//! Result tables: an aligned text rendering and a lossless CSV.
//!
//! Columns: test channel, prediction model,
//! training channel, model parameters, then the thirteen error statistics.
//! The text table shows squared errors in units of 1e-3 and the others in
//! percent. The CSV keeps raw fractions, printed in shortest round-trip
//! form, so reading it back reproduces every value exactly. Its second line
//! names the unit of each column.

use std::io::{Read, Write};
use std::path::PathBuf;

use super::ModelKind;
use crate::error::{Error, Result};
use crate::metrics::{ErrorStats, PERCENTILE_CONVENTION};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub test_channel: String,
    pub model: ModelKind,
    /// Already rendered, e.g. `ch1`, `all` or `all-but-ch1`.
    pub training_channel: String,
    pub alpha_star: f64,
    pub stats: ErrorStats,
}

const LABEL_COLUMNS: [&str; 4] = ["test_channel", "model", "training_channel", "alpha_star"];

const TEXT_HEADERS: [&str; 13] = [
    "mu_e2",
    "e2_p95",
    "e2_max",
    "mu_|e|",
    "sigma_|e|",
    "|e|_p90",
    "|e|_p95",
    "|e|_p99",
    "|e|_max",
    "e_min",
    "e_p5",
    "e_p95",
    "e_max",
];

fn unit(col: usize) -> &'static str {
    if col < 3 {
        "fraction^2"
    } else {
        "fraction"
    }
}

fn scale(col: usize) -> f64 {
    if col < 3 {
        1e3
    } else {
        1e2
    }
}

pub fn format_alpha(alpha_star: f64) -> String {
    format!("α*={alpha_star:.6}")
}

pub fn render_text(rows: &[ReportRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Empty("report rows"));
    }
    let mut header: Vec<String> = ["Test channel", "Model", "Training", "Parameters"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(TEXT_HEADERS.iter().map(|s| s.to_string()));
    let mut units: Vec<String> = vec![String::new(); 4];
    units.extend((0..13).map(|c| if c < 3 { "[1e-3]" } else { "[%]" }.to_string()));

    let mut cells: Vec<Vec<String>> = vec![header, units];
    for r in rows {
        let mut line = vec![
            r.test_channel.clone(),
            r.model.display_name().to_string(),
            r.training_channel.clone(),
            format_alpha(r.alpha_star),
        ];
        line.extend(
            r.stats
                .to_array()
                .iter()
                .enumerate()
                .map(|(c, v)| format!("{:.2}", v * scale(c))),
        );
        cells.push(line);
    }

    let ncol = cells[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| {
            cells
                .iter()
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for line in &cells {
        let mut text = String::new();
        for (c, cell) in line.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c > 0 {
                text.push_str("  ");
            }
            if c < 4 {
                text.push_str(cell);
                text.extend(std::iter::repeat_n(' ', pad));
            } else {
                text.extend(std::iter::repeat_n(' ', pad));
                text.push_str(cell);
            }
        }
        out.push_str(text.trim_end());
        out.push('\n');
    }
    out.push_str(&format!("percentiles: {PERCENTILE_CONVENTION}\n"));
    Ok(out)
}

pub fn write_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Empty("report rows"));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = LABEL_COLUMNS.to_vec();
    header.extend(ErrorStats::FIELD_NAMES);
    w.write_record(&header)?;
    let mut units = vec!["label", "label", "label", "smoothing factor"];
    units.extend((0..13).map(unit));
    w.write_record(&units)?;
    for r in rows {
        let mut rec = vec![
            r.test_channel.clone(),
            r.model.as_str().to_string(),
            r.training_channel.clone(),
            r.alpha_star.to_string(),
        ];
        rec.extend(r.stats.to_array().iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`]; `path` only labels errors.
pub fn read_csv<R: Read>(reader: R, path: impl Into<PathBuf>) -> Result<Vec<ReportRow>> {
    let path = path.into();
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.clone(),
        line,
        reason,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(reader);
    let mut records = r.records();
    let mut expected: Vec<&str> = LABEL_COLUMNS.to_vec();
    expected.extend(ErrorStats::FIELD_NAMES);
    match records.next() {
        Some(h) => {
            let h = h?;
            if h.iter().ne(expected.iter().copied()) {
                return Err(parse_err(1, "unexpected header".into()));
            }
        }
        None => return Err(Error::Empty("report csv")),
    }
    records
        .next()
        .ok_or_else(|| parse_err(2, "missing units line".into()))??;
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 3;
        let rec = rec?;
        if rec.len() != expected.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields", expected.len()),
            ));
        }
        let real = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad number {:?}", &rec[k])))
        };
        let mut stats = [0.0; 13];
        for (k, s) in stats.iter_mut().enumerate() {
            *s = real(4 + k)?;
        }
        rows.push(ReportRow {
            test_channel: rec[0].to_string(),
            model: rec[1]
                .parse()
                .map_err(|_| parse_err(line, format!("bad model {:?}", &rec[1])))?,
            training_channel: rec[2].to_string(),
            alpha_star: real(3)?,
            stats: ErrorStats::from_array(stats),
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("report csv"));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ReportRow {
        ReportRow {
            test_channel: "ch1".into(),
            model: ModelKind::Ema,
            training_channel: "ch1".into(),
            alpha_star: 0.0009,
            stats: ErrorStats::from_array([
                2.03e-3, 1.058e-2, 0.11153, 0.0264, 0.0365, 0.0692, 0.1029, 0.1757, 0.334, -0.3135,
                -0.0673, 0.0716, 0.334,
            ]),
        }
    }

    #[test]
    fn parameters_column() {
        let text = render_text(&[row()]).unwrap();
        assert!(text.contains("α*=0.000900"), "{text}");
        assert!(text.contains(" 2.03 "));
        assert!(text.contains("-31.35"));
        assert!(text.contains(PERCENTILE_CONVENTION));
    }

    #[test]
    fn empty_rows_are_an_error() {
        assert!(render_text(&[]).is_err());
        assert!(write_csv(&[], Vec::new()).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut r = row();
        r.stats.mu_e2 = 0.1 + 0.2;
        r.alpha_star = 1.0 / 3.0;
        let mut buf = Vec::new();
        write_csv(&[r.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("fraction^2"));
        let back = read_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, vec![r]);
    }
}
