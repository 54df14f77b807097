//! Prediction-error statistics.
//!
//! For signed errors `e = prediction - target` the panel reports the
//! squared error (mean, 95th percentile, max), the absolute error (mean,
//! population standard deviation, 90/95/99th percentiles, max) and the
//! signed error (min, 5th and 95th percentiles, max). Everything is kept as
//! raw fractions; scaling to `1e-3` or percent is a rendering concern.
//!
//! Percentiles interpolate linearly between closest ranks: for `n` sorted
//! values the `q`-th percentile sits at rank `q / 100 * (n - 1)`.

use crate::error::{Error, Result};

/// Name of the percentile convention, printed alongside reports.
pub const PERCENTILE_CONVENTION: &str = "linear interpolation between closest ranks (C=1)";

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    errors: Vec<f64>,
}

impl ErrorSeries {
    pub fn new(errors: Vec<f64>) -> Result<Self> {
        if let Some(i) = errors.iter().position(|e| !e.is_finite()) {
            return Err(Error::validation(
                "error series",
                format!("non-finite error at index {i}"),
            ));
        }
        Ok(ErrorSeries { errors })
    }

    pub fn values(&self) -> &[f64] {
        &self.errors
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Signed errors `prediction - target`, element by element.
pub fn prediction_errors(predictions: &[f64], targets: &[f64]) -> Result<ErrorSeries> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    ErrorSeries::new(
        predictions
            .iter()
            .zip(targets)
            .map(|(p, t)| p - t)
            .collect(),
    )
}

fn check_q(q: f64) -> Result<()> {
    if (0.0..=100.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::validation(
            "percentile",
            format!("q={q} is outside [0, 100]"),
        ))
    }
}

/// Percentile of already sorted data.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile input"));
    }
    check_q(q)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, q))
}

/// The thirteen statistics, as raw fractions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub mu_e2: f64,
    pub e2_p95: f64,
    pub e2_max: f64,
    pub mu_abs: f64,
    pub sigma_abs: f64,
    pub abs_p90: f64,
    pub abs_p95: f64,
    pub abs_p99: f64,
    pub abs_max: f64,
    pub e_min: f64,
    pub e_p5: f64,
    pub e_p95: f64,
    pub e_max: f64,
}

impl ErrorStats {
    pub const FIELD_NAMES: [&'static str; 13] = [
        "mu_e2",
        "e2_p95",
        "e2_max",
        "mu_abs",
        "sigma_abs",
        "abs_p90",
        "abs_p95",
        "abs_p99",
        "abs_max",
        "e_min",
        "e_p5",
        "e_p95",
        "e_max",
    ];

    /// Fields in report column order.
    pub fn to_array(&self) -> [f64; 13] {
        [
            self.mu_e2,
            self.e2_p95,
            self.e2_max,
            self.mu_abs,
            self.sigma_abs,
            self.abs_p90,
            self.abs_p95,
            self.abs_p99,
            self.abs_max,
            self.e_min,
            self.e_p5,
            self.e_p95,
            self.e_max,
        ]
    }

    pub fn from_array(v: [f64; 13]) -> Self {
        ErrorStats {
            mu_e2: v[0],
            e2_p95: v[1],
            e2_max: v[2],
            mu_abs: v[3],
            sigma_abs: v[4],
            abs_p90: v[5],
            abs_p95: v[6],
            abs_p99: v[7],
            abs_max: v[8],
            e_min: v[9],
            e_p5: v[10],
            e_p95: v[11],
            e_max: v[12],
        }
    }
}

pub fn summarize_errors(errors: &ErrorSeries) -> Result<ErrorStats> {
    let e = errors.values();
    if e.is_empty() {
        return Err(Error::Empty("error series"));
    }
    let n = e.len() as f64;

    let mut signed = e.to_vec();
    signed.sort_by(f64::total_cmp);
    let mut abs: Vec<f64> = e.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    // Squaring is monotone on |e|, so the sorted squares come for free.
    let sq: Vec<f64> = abs.iter().map(|v| v * v).collect();

    let mu_e2 = sq.iter().sum::<f64>() / n;
    let mu_abs = abs.iter().sum::<f64>() / n;
    let var_abs = abs.iter().map(|v| (v - mu_abs) * (v - mu_abs)).sum::<f64>() / n;

    Ok(ErrorStats {
        mu_e2,
        e2_p95: percentile_sorted(&sq, 95.0),
        e2_max: *sq.last().unwrap(),
        mu_abs,
        sigma_abs: var_abs.sqrt(),
        abs_p90: percentile_sorted(&abs, 90.0),
        abs_p95: percentile_sorted(&abs, 95.0),
        abs_p99: percentile_sorted(&abs, 99.0),
        abs_max: *abs.last().unwrap(),
        e_min: signed[0],
        e_p5: percentile_sorted(&signed, 5.0),
        e_p95: percentile_sorted(&signed, 95.0),
        e_max: *signed.last().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_convention_and_alignment() {
        let e = prediction_errors(&[0.6], &[0.5]).unwrap();
        assert!((e.values()[0] - 0.1).abs() < 1e-15 && e.values()[0] > 0.0);
        let zero = prediction_errors(&[0.2, 0.9], &[0.2, 0.9]).unwrap();
        assert_eq!(zero.values(), &[0.0, 0.0]);
        assert!(prediction_errors(&[0.0; 10], &[0.0; 9]).is_err());
    }

    #[test]
    fn percentile_examples() {
        let v = [3.0, 1.0, 4.0, 2.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
        assert_eq!(percentile(&v, 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[5.0], 37.0).unwrap(), 5.0);
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&v, 101.0).is_err());
    }

    #[test]
    fn hand_computed_summary() {
        let s = summarize_errors(&ErrorSeries::new(vec![0.1, -0.2, 0.3]).unwrap()).unwrap();
        assert!((s.mu_e2 - 0.14 / 3.0).abs() < 1e-15);
        assert!((s.mu_e2 - 0.046667).abs() < 1e-6);
        assert_eq!(s.abs_max, 0.3);
        assert_eq!(s.e_min, -0.2);
        assert_eq!(s.e_max, 0.3);
    }

    #[test]
    fn zero_errors_give_zero_stats() {
        let s = summarize_errors(&ErrorSeries::new(vec![0.0; 7]).unwrap()).unwrap();
        assert_eq!(s, ErrorStats::default());
    }

    #[test]
    fn empty_and_non_finite() {
        assert!(summarize_errors(&ErrorSeries::new(vec![]).unwrap()).is_err());
        assert!(ErrorSeries::new(vec![0.1, f64::NAN]).is_err());
    }
}
