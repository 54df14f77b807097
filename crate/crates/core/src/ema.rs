//! Exponential moving averages over outcome traces.
//!
//! `y_i = alpha * x_i + (1 - alpha) * y_{i-1}`: one filter is the baseline
//! link-quality estimator, and a bank of 41 of them with smoothing factors
//! spread around the calibrated optimum is the network's input.

use std::fmt;

use crate::error::{Error, Result};
use crate::trace::{TargetSeries, Trace};

/// Number of filters in the bank.
pub const GRID_SIZE: usize = 41;
/// Index of the calibrated factor inside the grid.
pub const GRID_CENTER: usize = GRID_SIZE / 2;

/// Default calibration sweep: 61 log-spaced factors from 1e-5 to 1e-1.
pub const SWEEP_POINTS: usize = 61;
pub const SWEEP_MIN: f64 = 1e-5;
pub const SWEEP_MAX: f64 = 1e-1;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::validation(
            "smoothing factor",
            format!("{alpha} is outside (0, 1]"),
        ))
    }
}

fn check_state(state: f64) -> Result<()> {
    if (0.0..=1.0).contains(&state) {
        Ok(())
    } else {
        Err(Error::validation(
            "EMA state",
            format!("{state} is outside [0, 1]"),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaFilter {
    alpha: f64,
    state: f64,
}

impl EmaFilter {
    pub fn new(alpha: f64, init_state: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_state(init_state)?;
        Ok(EmaFilter {
            alpha,
            state: init_state,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn state(&self) -> f64 {
        self.state
    }

    /// Consumes one outcome and returns the new state.
    #[inline]
    pub fn push(&mut self, x: u8) -> f64 {
        self.state = self.alpha * x as f64 + (1.0 - self.alpha) * self.state;
        self.state
    }
}

/// Functional form of [`EmaFilter::push`].
pub fn ema_step(mut filter: EmaFilter, x: u8) -> EmaFilter {
    filter.push(x);
    filter
}

/// Filter output after each sample: `out[i]` has consumed `x_0 ..= x_i`.
pub fn ema_run(alpha: f64, trace: &Trace, init_state: f64) -> Result<Vec<f64>> {
    let mut filter = EmaFilter::new(alpha, init_state)?;
    Ok(trace.outcomes().iter().map(|&x| filter.push(x)).collect())
}

/// Initial filter state used when none is given: the delivery ratio of the
/// first `window` samples.
pub fn default_init_state(trace: &Trace, window: usize) -> f64 {
    trace.prefix_mean(window)
}

/// The 41 grid factors before clamping: `alpha*/(k*sqrt2)` for k = 20..1,
/// `alpha*`, then `k*sqrt2*alpha*` for k = 1..20.
pub fn unclamped_grid(alpha_star: f64) -> [f64; GRID_SIZE] {
    let mut out = [0.0; GRID_SIZE];
    let half = GRID_CENTER;
    for k in 1..=half {
        let factor = k as f64 * std::f64::consts::SQRT_2;
        out[half - k] = alpha_star / factor;
        out[half + k] = factor * alpha_star;
    }
    out[half] = alpha_star;
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGrid {
    alphas: Vec<f64>,
    alpha_star: f64,
}

impl AlphaGrid {
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_star(&self) -> f64 {
        self.alpha_star
    }

    /// Rebuilds a grid from stored values, checking they are what
    /// [`build_alpha_grid`] would produce for the stored center.
    pub fn from_parts(alpha_star: f64, alphas: Vec<f64>) -> Result<Self> {
        let expected = build_alpha_grid(alpha_star)?;
        if alphas != expected.alphas {
            return Err(Error::validation(
                "alpha grid",
                format!("stored factors do not match the grid around {alpha_star}"),
            ));
        }
        Ok(expected)
    }
}

/// Factors above 1 are capped at 1, so the grid always has 41 entries.
pub fn build_alpha_grid(alpha_star: f64) -> Result<AlphaGrid> {
    check_alpha(alpha_star)?;
    let alphas = unclamped_grid(alpha_star)
        .iter()
        .map(|&a| a.min(1.0))
        .collect();
    Ok(AlphaGrid { alphas, alpha_star })
}

/// Per-step filter-bank outputs, row-major with one row per trace index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    width: usize,
    start_index: usize,
}

impl FeatureMatrix {
    pub fn from_rows(data: Vec<f64>, width: usize, start_index: usize) -> Result<Self> {
        if width == 0 || !data.len().is_multiple_of(width) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form rows of width {width}",
                data.len()
            )));
        }
        Ok(FeatureMatrix {
            data,
            width,
            start_index,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.width
    }

    /// Trace index of the first row.
    pub fn start_index(&self) -> usize {
        self.start_index
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn iter_rows(&self) -> impl DoubleEndedIterator<Item = &[f64]> + ExactSizeIterator + '_ {
        self.data.chunks_exact(self.width)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows `start..end` (matrix-relative), keeping trace alignment.
    pub fn slice_rows(&self, start: usize, end: usize) -> FeatureMatrix {
        let end = end.min(self.rows());
        let start = start.min(end);
        FeatureMatrix {
            data: self.data[start * self.width..end * self.width].to_vec(),
            width: self.width,
            start_index: self.start_index + start,
        }
    }

    /// Appends another matrix's rows. The result's `start_index` is that of
    /// `self`; alignment across the seam is the caller's business.
    pub fn append(&mut self, other: &FeatureMatrix) -> Result<()> {
        if other.width != self.width {
            return Err(Error::ShapeMismatch(format!(
                "cannot append width {} rows to width {}",
                other.width, self.width
            )));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }
}

pub fn compute_feature_matrix(
    grid: &AlphaGrid,
    trace: &Trace,
    init_state: f64,
) -> Result<FeatureMatrix> {
    check_state(init_state)?;
    let width = grid.alphas.len();
    let mut data = vec![0.0; trace.len() * width];
    for (j, &alpha) in grid.alphas.iter().enumerate() {
        let mut filter = EmaFilter::new(alpha, init_state)?;
        for (row, &x) in data.chunks_exact_mut(width).zip(trace.outcomes()) {
            row[j] = filter.push(x);
        }
    }
    Ok(FeatureMatrix {
        data,
        width,
        start_index: 0,
    })
}

/// Log-spaced candidate factors, `points` values from `min` to `max`.
pub fn log_sweep(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![min],
        _ => {
            let (lo, hi) = (min.log10(), max.log10());
            (0..points)
                .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64))
                .collect()
        }
    }
}

pub fn default_candidates() -> Vec<f64> {
    log_sweep(SWEEP_MIN, SWEEP_MAX, SWEEP_POINTS)
}

/// One trace taking part in a calibration, with its targets and the filter
/// state it starts from. The first `targets.window()` indices are warm-up
/// and do not count.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSegment<'a> {
    pub trace: &'a Trace,
    pub targets: &'a TargetSeries,
    pub init_state: f64,
}

impl<'a> CalibrationSegment<'a> {
    pub fn new(trace: &'a Trace, targets: &'a TargetSeries) -> Self {
        CalibrationSegment {
            trace,
            targets,
            init_state: default_init_state(trace, targets.window()),
        }
    }

    fn check(&self) -> Result<()> {
        if self.trace.len() != self.targets.len() + self.targets.window() {
            return Err(Error::LengthMismatch {
                left: self.trace.len(),
                right: self.targets.len() + self.targets.window(),
            });
        }
        Ok(())
    }

    /// Sum of squared errors and number of scored steps for one factor.
    fn squared_error(&self, alpha: f64) -> Result<(f64, usize)> {
        let mut filter = EmaFilter::new(alpha, self.init_state)?;
        let warmup = self.targets.window();
        let mut sse = 0.0;
        let mut count = 0;
        for (i, &x) in self.trace.outcomes().iter().enumerate() {
            let y = filter.push(x);
            if i >= self.targets.len() {
                break;
            }
            if i >= warmup {
                let e = y - self.targets.values()[i];
                sse += e * e;
                count += 1;
            }
        }
        Ok((sse, count))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub alpha_star: f64,
    pub mse: f64,
}

impl fmt::Display for Calibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alpha*={:.6} mse={:.6e}", self.alpha_star, self.mse)
    }
}

/// Mean squared error of a single filter over the scored range of every
/// segment, pooled across segments.
pub fn ema_mse(alpha: f64, segments: &[CalibrationSegment<'_>]) -> Result<f64> {
    let mut sse = 0.0;
    let mut count = 0;
    for seg in segments {
        seg.check()?;
        let (s, c) = seg.squared_error(alpha)?;
        sse += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::TraceTooShort {
            len: segments.iter().map(|s| s.trace.len()).max().unwrap_or(0),
            window: segments.first().map_or(0, |s| s.targets.window()),
            needed: segments.first().map_or(0, |s| 2 * s.targets.window() + 1),
        });
    }
    Ok(sse / count as f64)
}

/// Picks the candidate with the lowest pooled MSE; ties go to the smaller
/// factor.
pub fn calibrate_alpha_segments(
    segments: &[CalibrationSegment<'_>],
    candidates: &[f64],
) -> Result<Calibration> {
    if candidates.is_empty() {
        return Err(Error::Empty("calibration candidates"));
    }
    if segments.is_empty() {
        return Err(Error::Empty("calibration traces"));
    }
    for &a in candidates {
        check_alpha(a)?;
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<Calibration> = None;
    for alpha in sorted {
        let mse = ema_mse(alpha, segments)?;
        if best.is_none_or(|b| mse < b.mse) {
            best = Some(Calibration {
                alpha_star: alpha,
                mse,
            });
        }
    }
    Ok(best.expect("candidates are non-empty"))
}

pub fn calibrate_alpha(
    train_trace: &Trace,
    targets: &TargetSeries,
    candidates: &[f64],
) -> Result<Calibration> {
    calibrate_alpha_segments(&[CalibrationSegment::new(train_trace, targets)], candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::compute_fdr_targets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace(x: Vec<u8>) -> Trace {
        Trace::from_outcomes(x, "t").unwrap()
    }

    fn closed_form(alpha: f64, x: &[u8], init: f64, i: usize) -> f64 {
        // After consuming x_0..=x_i (i+1 samples).
        let n = i + 1;
        let keep = 1.0 - alpha;
        let mut acc = keep.powf(n as f64) * init;
        for (k, &xk) in x[..n].iter().enumerate() {
            acc += alpha * keep.powf((i - k) as f64) * xk as f64;
        }
        acc
    }

    #[test]
    fn memoryless_filter() {
        let f = ema_step(EmaFilter::new(1.0, 0.3).unwrap(), 1);
        assert_eq!(f.state(), 1.0);
    }

    #[test]
    fn hand_unrolled_half() {
        let mut f = EmaFilter::new(0.5, 0.0).unwrap();
        let states: Vec<f64> = [1, 0, 1].iter().map(|&x| f.push(x)).collect();
        assert_eq!(states, vec![0.5, 0.25, 0.625]);
    }

    #[test]
    fn small_alpha_moves_slowly() {
        let alpha = 0.000900;
        let mut f = EmaFilter::new(alpha, 0.5).unwrap();
        for i in 0..10_000u32 {
            let before = f.state();
            let after = f.push((i % 7 != 0) as u8);
            assert!((after - before).abs() <= alpha);
        }
    }

    #[test]
    fn constant_trace_is_a_fixed_point() {
        let out = ema_run(0.01, &trace(vec![1; 100]), 1.0).unwrap();
        assert!(out.iter().all(|&y| y == 1.0));
    }

    #[test]
    fn matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<u8> = (0..3000).map(|_| rng.gen_bool(0.8) as u8).collect();
        let t = trace(x.clone());
        for alpha in [1.0, 0.3, 0.01, 0.000085] {
            let out = ema_run(alpha, &t, 0.42).unwrap();
            for i in [0, 1, 17, 999, 2999] {
                assert!((out[i] - closed_form(alpha, &x, 0.42, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn slow_filter_drifts_toward_half_on_alternating_input() {
        let x: Vec<u8> = (0..60_000).map(|i| (i % 2) as u8).collect();
        let out = ema_run(0.000085, &trace(x), 1.0).unwrap();
        // Envelope: even-index states shrink monotonically toward 0.5.
        let evens: Vec<f64> = out.iter().step_by(2).copied().collect();
        assert!(evens.windows(2).all(|w| w[1] <= w[0]));
        assert!(out[59_999] < 0.51 && out[59_999] > 0.5);
    }

    #[test]
    fn grid_endpoints_and_length() {
        let g = build_alpha_grid(0.000325).unwrap();
        assert_eq!(g.alphas().len(), 41);
        assert!((g.alphas()[0] - 1.1490e-5).abs() < 1e-9);
        assert!((g.alphas()[40] - 9.1924e-3).abs() < 1e-7);
        assert_eq!(g.alphas()[GRID_CENTER], 0.000325);
        assert!(g.alphas().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_upper_tail_clamps() {
        let g = build_alpha_grid(0.05).unwrap();
        assert_eq!(g.alphas().len(), 41);
        assert_eq!(g.alphas()[40], 1.0);
        assert!(unclamped_grid(0.05)[40] > 1.4);
        assert!(g.alphas().windows(2).all(|w| w[0] <= w[1]));
        assert!(g.alphas().iter().all(|&a| a > 0.0 && a <= 1.0));
    }

    #[test]
    fn grid_rejects_out_of_range_center() {
        assert!(build_alpha_grid(0.0).is_err());
        assert!(build_alpha_grid(1.5).is_err());
        assert!(build_alpha_grid(1.0).is_ok());
    }

    #[test]
    fn grid_from_parts_validates() {
        let g = build_alpha_grid(0.001).unwrap();
        assert_eq!(
            AlphaGrid::from_parts(0.001, g.alphas().to_vec()).unwrap(),
            g
        );
        let mut bad = g.alphas().to_vec();
        bad[3] *= 1.01;
        assert!(AlphaGrid::from_parts(0.001, bad).is_err());
    }

    #[test]
    fn feature_columns_equal_single_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = trace((0..2000).map(|_| rng.gen_bool(0.7) as u8).collect());
        let g = build_alpha_grid(0.01).unwrap();
        let m = compute_feature_matrix(&g, &t, 0.7).unwrap();
        assert_eq!((m.rows(), m.width()), (2000, 41));
        for j in [0, 20, 40] {
            assert_eq!(m.column(j), ema_run(g.alphas()[j], &t, 0.7).unwrap());
        }
    }

    #[test]
    fn constant_trace_gives_all_ones_features() {
        let g = build_alpha_grid(0.001).unwrap();
        let m = compute_feature_matrix(&g, &trace(vec![1; 50]), 1.0).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn singleton_candidate_is_returned() {
        let t = trace((0..300).map(|i| (i % 3 != 0) as u8).collect());
        let targets = compute_fdr_targets(&t, 50).unwrap();
        let cal = calibrate_alpha(&t, &targets, &[0.3]).unwrap();
        assert_eq!(cal.alpha_star, 0.3);
        let seg = CalibrationSegment::new(&t, &targets);
        assert_eq!(cal.mse, ema_mse(0.3, &[seg]).unwrap());
    }

    #[test]
    fn smoothing_wins_on_iid_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let t = trace((0..40_000).map(|_| rng.gen_bool(0.5) as u8).collect());
        let targets = compute_fdr_targets(&t, 3600).unwrap();
        let cal = calibrate_alpha(&t, &targets, &[0.5, 0.001]).unwrap();
        assert_eq!(cal.alpha_star, 0.001);
    }

    #[test]
    fn ties_go_to_smaller_alpha() {
        // A constant trace scores zero error for every factor.
        let t = trace(vec![1; 400]);
        let targets = compute_fdr_targets(&t, 100).unwrap();
        let cal = calibrate_alpha(&t, &targets, &[0.5, 0.2, 0.9]).unwrap();
        assert_eq!((cal.alpha_star, cal.mse), (0.2, 0.0));
    }

    #[test]
    fn calibration_errors() {
        let t = trace(vec![1; 400]);
        let targets = compute_fdr_targets(&t, 100).unwrap();
        assert!(matches!(
            calibrate_alpha(&t, &targets, &[]),
            Err(Error::Empty(_))
        ));
        assert!(calibrate_alpha(&t, &targets, &[0.0]).is_err());
        // Too short for any scored step after the warm-up.
        let short = trace(vec![1; 150]);
        let targets = compute_fdr_targets(&short, 100).unwrap();
        assert!(calibrate_alpha(&short, &targets, &[0.1]).is_err());
    }

    #[test]
    fn default_sweep_brackets_known_optima() {
        let c = default_candidates();
        assert_eq!(c.len(), 61);
        assert!((c[0] - 1e-5).abs() < 1e-18 && (c[60] - 0.1).abs() < 1e-15);
        for opt in [0.000900, 0.000085, 0.000090, 0.000500] {
            let nearest = c
                .iter()
                .map(|&a| (a / opt).ln().abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.2_f64.ln_1p(), "{opt}");
        }
    }
}
