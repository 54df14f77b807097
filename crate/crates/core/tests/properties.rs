use proptest::prelude::*;

use wcqp::ema::{
    build_alpha_grid, calibrate_alpha, ema_mse, ema_run, log_sweep, unclamped_grid,
    CalibrationSegment, GRID_CENTER,
};
use wcqp::metrics::{summarize_errors, ErrorSeries};
use wcqp::nn::{
    build_default, epoch_permutation, learning_rate, read_model, write_model, ArchKind,
};
use wcqp::trace::{compute_fdr_targets, read_trace, write_trace, Trace};

fn outcomes(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, 1..max)
}

fn alpha() -> impl Strategy<Value = f64> {
    (-5.0f64..0.0).prop_map(|e| 10f64.powf(e))
}

fn errors() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..300)
}

fn stats(e: &[f64]) -> [f64; 13] {
    summarize_errors(&ErrorSeries::new(e.to_vec()).unwrap())
        .unwrap()
        .to_array()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn ema_stays_in_unit_interval(x in outcomes(2000), a in alpha(), init in 0.0f64..=1.0) {
        let t = Trace::from_outcomes(x, "p").unwrap();
        for y in ema_run(a, &t, init).unwrap() {
            prop_assert!((0.0..=1.0).contains(&y));
        }
    }

    #[test]
    fn ema_is_monotone_in_initial_state(x in outcomes(500), a in alpha(), lo in 0.0f64..0.5, d in 0.0f64..0.5) {
        let t = Trace::from_outcomes(x, "p").unwrap();
        let low = ema_run(a, &t, lo).unwrap();
        let high = ema_run(a, &t, lo + d).unwrap();
        prop_assert!(low.iter().zip(&high).all(|(l, h)| l <= h));
    }

    #[test]
    fn grid_is_geometric_around_centre(a in alpha()) {
        let raw = unclamped_grid(a);
        for k in 1..=GRID_CENTER {
            let up = raw[GRID_CENTER + k] / a;
            let down = a / raw[GRID_CENTER - k];
            prop_assert!((up - down).abs() <= 1e-12 * up);
            prop_assert!((up - k as f64 * std::f64::consts::SQRT_2).abs() <= 1e-12 * up);
        }
        let grid = build_alpha_grid(a).unwrap();
        prop_assert!(grid.alphas().windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(grid.alphas().iter().all(|&v| v > 0.0 && v <= 1.0));
        prop_assert_eq!(grid.alpha_star(), a);
    }

    #[test]
    fn targets_are_window_means(x in outcomes(400), w in 1usize..50) {
        prop_assume!(x.len() > w);
        let t = Trace::from_outcomes(x.clone(), "p").unwrap();
        let tg = compute_fdr_targets(&t, w).unwrap();
        prop_assert_eq!(tg.len(), x.len() - w);
        for (i, v) in tg.values().iter().enumerate() {
            let ones: usize = x[i + 1..=i + w].iter().map(|&b| b as usize).sum();
            prop_assert_eq!(*v, ones as f64 / w as f64);
        }
    }

    #[test]
    fn calibration_picks_the_smallest_mse(x in outcomes(3000), w in 20usize..200) {
        prop_assume!(x.len() > 2 * w + 1);
        let t = Trace::from_outcomes(x, "p").unwrap();
        let tg = compute_fdr_targets(&t, w).unwrap();
        let cands = log_sweep(1e-4, 0.5, 9);
        let cal = calibrate_alpha(&t, &tg, &cands).unwrap();
        let seg = [CalibrationSegment::new(&t, &tg)];
        prop_assert!(cands.contains(&cal.alpha_star));
        prop_assert_eq!(cal.mse, ema_mse(cal.alpha_star, &seg).unwrap());
        for &c in &cands {
            let m = ema_mse(c, &seg).unwrap();
            prop_assert!(m > cal.mse || (m == cal.mse && c >= cal.alpha_star));
        }
    }

    #[test]
    fn metrics_ignore_order(e in errors(), seed in any::<u64>()) {
        let mut shuffled = e.clone();
        let perm = epoch_permutation(seed, 1, e.len());
        for (dst, &src) in shuffled.iter_mut().zip(&perm) {
            *dst = e[src];
        }
        let (a, b) = (stats(&e), stats(&shuffled));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(close(*x, *y));
        }
    }

    #[test]
    fn negation_mirrors_signed_stats(e in errors()) {
        let neg: Vec<f64> = e.iter().map(|v| -v).collect();
        let (a, b) = (stats(&e), stats(&neg));
        // Squared and absolute statistics are unchanged.
        for k in 0..9 {
            prop_assert!(close(a[k], b[k]));
        }
        prop_assert!(close(a[9], -b[12]));
        prop_assert!(close(a[10], -b[11]));
    }

    #[test]
    fn scaling_scales_stats(e in errors(), c in 0.01f64..10.0) {
        let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
        let (a, b) = (stats(&e), stats(&scaled));
        for k in 0..13 {
            let factor = if k < 3 { c * c } else { c };
            prop_assert!((a[k] * factor - b[k]).abs() <= 1e-12 * (1.0 + b[k].abs()));
        }
    }

    #[test]
    fn permutations_are_permutations(seed in any::<u64>(), epoch in 1usize..20, n in 0usize..500) {
        let mut p = epoch_permutation(seed, epoch, n);
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn learning_rate_halves(epoch in 1usize..60) {
        prop_assert_eq!(learning_rate(0.01, epoch + 1) * 2.0, learning_rate(0.01, epoch));
    }

    #[test]
    fn trace_files_round_trip(x in outcomes(5000), seed in prop::option::of(any::<u64>())) {
        let t = Trace::from_outcomes(x, "ch7").unwrap().with_seed(seed);
        let mut bytes = Vec::new();
        write_trace(&t, &mut bytes).unwrap();
        let back = read_trace(bytes.as_slice(), "mem").unwrap();
        prop_assert_eq!(&back, &t);
        let mut again = Vec::new();
        write_trace(&back, &mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_files_round_trip(seed in any::<u64>(), pyramid in any::<bool>()) {
        let kind = if pyramid { ArchKind::Pyramid } else { ArchKind::Hourglass };
        let m = build_default(kind, seed).unwrap();
        let mut bytes = Vec::new();
        write_model(&m, &mut bytes).unwrap();
        let back = read_model(bytes.as_slice(), "mem").unwrap();
        prop_assert_eq!(&back, &m);
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn network_output_is_a_probability(seed in any::<u64>(), x in prop::collection::vec(0.0f64..=1.0, 41)) {
        let y = build_default(ArchKind::Hourglass, seed).unwrap().forward(&x).unwrap();
        prop_assert!(y > 0.0 && y < 1.0);
    }
}
