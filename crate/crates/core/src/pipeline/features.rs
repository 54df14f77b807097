//! Turning traces into scored (prediction, target) pairs.
//!
//! Every training trace is filtered on its own, starting from the delivery
//! ratio of its first `window` samples. Index `i` is scored when
//! `window <= i` (the filters have warmed up) and `i < len - window` (a full
//! future window exists). Merging several traces concatenates their scored
//! pairs, so no filter state ever crosses from one channel into another.
//!
//! Test traces start from the initial state recorded at training time (the
//! mean of the per-trace initial states), never from their own samples.

use std::ops::Range;

use crate::ema::{
    build_alpha_grid, calibrate_alpha_segments, compute_feature_matrix, default_init_state,
    ema_run, AlphaGrid, Calibration, CalibrationSegment,
};
use crate::error::{Error, Result};
use crate::nn::{Dataset, MlpModel};
use crate::trace::{compute_fdr_targets, TargetSeries, Trace};

/// Trace indices that are scored for a trace of `len` samples.
pub fn scored_range(len: usize, window: usize) -> Range<usize> {
    window..len.saturating_sub(window).max(window)
}

fn check_scorable(trace: &Trace, window: usize) -> Result<()> {
    if scored_range(trace.len(), window).is_empty() {
        return Err(Error::TraceTooShort {
            len: trace.len(),
            window,
            needed: 2 * window + 1,
        });
    }
    Ok(())
}

/// Features and targets of the scored range of one trace.
pub fn featurize(trace: &Trace, grid: &AlphaGrid, window: usize) -> Result<Dataset> {
    featurize_with_init(trace, grid, window, default_init_state(trace, window))
}

/// Like [`featurize`], with the filters starting from `init`.
pub fn featurize_with_init(
    trace: &Trace,
    grid: &AlphaGrid,
    window: usize,
    init: f64,
) -> Result<Dataset> {
    check_scorable(trace, window)?;
    let targets = compute_fdr_targets(trace, window)?;
    let range = scored_range(trace.len(), window);
    let features = compute_feature_matrix(grid, trace, init)?.slice_rows(range.start, range.end);
    Dataset::new(features, targets.values()[range].to_vec())
}

/// Concatenates the per-trace scored pairs of every trace.
pub fn merge_training_traces(
    traces: &[&Trace],
    grid: &AlphaGrid,
    window: usize,
) -> Result<Dataset> {
    let (first, rest) = traces
        .split_first()
        .ok_or(Error::Empty("training traces"))?;
    for t in rest {
        if t.sample_period_s() != first.sample_period_s() {
            return Err(Error::validation(
                "training traces",
                format!(
                    "sample periods differ: {} has {} s, {} has {} s",
                    first.channel_label(),
                    first.sample_period_s(),
                    t.channel_label(),
                    t.sample_period_s()
                ),
            ));
        }
    }
    let mut merged = featurize(first, grid, window)?;
    for t in rest {
        merged.extend(&featurize(t, grid, window)?)?;
    }
    Ok(merged)
}

/// Grid-search calibration pooled over several training traces.
pub fn calibrate_traces(
    traces: &[&Trace],
    window: usize,
    candidates: &[f64],
) -> Result<Calibration> {
    let targets: Vec<TargetSeries> = traces
        .iter()
        .map(|t| {
            check_scorable(t, window)?;
            compute_fdr_targets(t, window)
        })
        .collect::<Result<_>>()?;
    let segments: Vec<CalibrationSegment<'_>> = traces
        .iter()
        .zip(&targets)
        .map(|(t, tg)| CalibrationSegment::new(t, tg))
        .collect();
    calibrate_alpha_segments(&segments, candidates)
}

/// Mean of the per-trace initial states; recorded in model provenance.
pub fn pooled_init_state(traces: &[&Trace], window: usize) -> f64 {
    traces
        .iter()
        .map(|t| default_init_state(t, window))
        .sum::<f64>()
        / traces.len().max(1) as f64
}

/// Scored predictions of the single-filter baseline and their targets.
pub fn ema_predictions(
    trace: &Trace,
    alpha: f64,
    window: usize,
    init: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_scorable(trace, window)?;
    let targets = compute_fdr_targets(trace, window)?;
    let out = ema_run(alpha, trace, init)?;
    let range = scored_range(trace.len(), window);
    Ok((
        out[range.clone()].to_vec(),
        targets.values()[range].to_vec(),
    ))
}

/// Scored network predictions on `trace` and their targets.
pub fn nn_predictions(
    model: &MlpModel,
    trace: &Trace,
    grid: &AlphaGrid,
    window: usize,
    init: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let data = featurize_with_init(trace, grid, window, init)?;
    let preds = model.predict_series(data.features())?;
    Ok((preds, data.targets().to_vec()))
}

/// Calibrates `alpha*` on `traces` and builds the grid around it.
pub fn calibrated_grid(
    traces: &[&Trace],
    window: usize,
    candidates: &[f64],
) -> Result<(Calibration, AlphaGrid)> {
    let cal = calibrate_traces(traces, window, candidates)?;
    let grid = build_alpha_grid(cal.alpha_star)?;
    Ok((cal, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Origin;

    fn t(x: Vec<u8>, label: &str) -> Trace {
        Trace::from_outcomes(x, label).unwrap()
    }

    #[test]
    fn scored_range_bounds() {
        assert_eq!(scored_range(100, 10), 10..90);
        assert!(scored_range(20, 10).is_empty());
        assert!(scored_range(5, 10).is_empty());
    }

    #[test]
    fn single_trace_merge_is_identity() {
        let grid = build_alpha_grid(0.05).unwrap();
        let a = t((0..300).map(|i| (i % 4 != 0) as u8).collect(), "a");
        assert_eq!(
            merge_training_traces(&[&a], &grid, 20).unwrap(),
            featurize(&a, &grid, 20).unwrap()
        );
    }

    #[test]
    fn merged_count_is_sum() {
        let grid = build_alpha_grid(0.05).unwrap();
        let a = t(vec![1; 300], "a");
        let b = t((0..500).map(|i| (i % 3 != 0) as u8).collect(), "b");
        let m = merge_training_traces(&[&a, &b], &grid, 20).unwrap();
        let na = featurize(&a, &grid, 20).unwrap().len();
        let nb = featurize(&b, &grid, 20).unwrap().len();
        assert_eq!(m.len(), na + nb);
    }

    #[test]
    fn sentinel_traces_do_not_mix() {
        let grid = build_alpha_grid(0.01).unwrap();
        let ones = t(vec![1; 400], "ones");
        let zeros = t(vec![0; 400], "zeros");
        let m = merge_training_traces(&[&ones, &zeros], &grid, 50).unwrap();
        let n = m.len() / 2;
        let f = m.features();
        for (i, row) in f.iter_rows().enumerate() {
            let expected = if i < n { 1.0 } else { 0.0 };
            assert!(row.iter().all(|&v| v == expected), "row {i}");
        }
    }

    #[test]
    fn mismatched_periods_are_rejected() {
        let grid = build_alpha_grid(0.01).unwrap();
        let a = t(vec![1; 400], "a");
        let b = Trace::new(vec![1; 400], 1.0, "b", Origin::Measured).unwrap();
        assert!(merge_training_traces(&[&a, &b], &grid, 50).is_err());
        assert!(merge_training_traces(&[], &grid, 50).is_err());
    }
}
