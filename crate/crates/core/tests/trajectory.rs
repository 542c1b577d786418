mod common;

use common::{euclidean, factor_returns, gaussian, prices_from, rng};
use marketstates::geometry::SimilarityMatrix;
use marketstates::nalgebra::DMatrix;
use marketstates::trajectory::{
    analyze_dissimilarity, analyze_trajectory, classify_catalog, cut_window, step_jump_ratio, Classification,
    WindowAnchor, WindowConfig,
};

/// Points with spread `sx, sy, sz` along the coordinate axes.
fn cloud(n: usize, spread: [f64; 3], seed: u64) -> SimilarityMatrix {
    let mut r = rng(seed);
    let pts = DMatrix::from_fn(n, 3, |_, d| spread[d] * gaussian(&mut r));
    SimilarityMatrix::from_matrix(euclidean(&pts)).unwrap()
}

#[test]
fn reversed_time_gives_the_same_classification() {
    let prices = prices_from(&factor_returns(10, 124, 0.5, 3));
    let mut reversed = prices.clone();
    let len = prices.n_dates();
    reversed.prices = DMatrix::from_fn(10, len, |i, t| prices.prices[(i, len - 1 - t)]);
    let anchor = WindowAnchor::Range { start: prices.dates[0].clone(), end: prices.dates[len - 1].clone() };
    let config = WindowConfig::default();
    let a = analyze_trajectory(&cut_window(&prices, "fwd", &anchor, &config).unwrap(), &config).unwrap();
    let b = analyze_trajectory(&cut_window(&reversed, "rev", &anchor, &config).unwrap(), &config).unwrap();
    assert_eq!(a.classification, b.classification);
    let ra = a.var_ratio.unwrap();
    assert!((ra - b.var_ratio.unwrap()).abs() < 1e-9 * ra);
    for (x, y) in a.step_lengths.iter().zip(b.step_lengths.iter().rev()) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn a_planted_jump_is_the_only_large_step() {
    let mut r = rng(31);
    let n = 60;
    let pts = DMatrix::from_fn(n, 3, |i, _| 0.01 * gaussian(&mut r) + if i >= 30 { 1.0 } else { 0.0 });
    let zeta = SimilarityMatrix::from_matrix(euclidean(&pts)).unwrap();
    let report = analyze_dissimilarity("jump", "a", "b", &zeta, 3, 0.4).unwrap();
    let mut sorted = report.step_lengths.clone();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[28] + sorted[29]) / 2.0;
    let big: Vec<usize> = (0..n - 1).filter(|&i| report.step_lengths[i] > 5.0 * median).collect();
    assert_eq!(big, vec![29]);
    assert!(step_jump_ratio(&report.step_lengths).unwrap() > 5.0);
}

#[test]
fn elongated_and_round_clouds() {
    let thin = analyze_dissimilarity("thin", "a", "b", &cloud(105, [1.0, 0.2, 0.1], 1), 3, 0.4).unwrap();
    let round = analyze_dissimilarity("round", "a", "b", &cloud(105, [1.0, 0.95, 0.9], 2), 3, 0.4).unwrap();
    assert_eq!(thin.classification, Classification::Critical);
    assert_eq!(round.classification, Classification::Normal);
    assert!(!thin.axis_order_violation && !round.axis_order_violation);
}

#[test]
fn threshold_sweep_is_monotone() {
    let windows: Vec<(f64, bool)> = (0..40)
        .map(|s| {
            let critical = s % 2 == 0;
            let sy = if critical { 0.3 + 0.01 * s as f64 } else { 0.6 + 0.01 * s as f64 };
            let rep = analyze_dissimilarity("w", "a", "b", &cloud(80, [1.0, sy.min(0.99), 0.05], s), 3, 0.4).unwrap();
            (rep.var_ratio.unwrap(), critical)
        })
        .collect();
    let mut last = (0.0, 0.0);
    for step in 0..=100 {
        let th = step as f64 / 100.0;
        let flagged = |want: bool| windows.iter().filter(|(r, c)| *c == want && *r < th).count() as f64 / 20.0;
        let point = (flagged(false), flagged(true));
        assert!(point.0 >= last.0 && point.1 >= last.1);
        last = point;
    }
    assert_eq!(last, (1.0, 1.0));
}

#[test]
fn centred_window_epoch_count() {
    let prices = prices_from(&factor_returns(8, 300, 0.5, 5));
    let config = WindowConfig::default();
    let anchor = WindowAnchor::Center { date: prices.dates[150].clone(), width: 125 };
    let w = cut_window(&prices, "e", &anchor, &config).unwrap();
    assert_eq!(w.epochs.len(), 105);
    assert_eq!(w.start_date, prices.dates[88]);
    assert_eq!(w.end_date, prices.dates[212]);
}

#[test]
fn centred_window_can_span_the_whole_panel() {
    let prices = prices_from(&factor_returns(8, 124, 0.5, 6));
    assert_eq!(prices.n_dates(), 125);
    let config = WindowConfig::default();
    let anchor = WindowAnchor::Center { date: prices.dates[62].clone(), width: 125 };
    let w = cut_window(&prices, "all", &anchor, &config).unwrap();
    assert_eq!(w.start_date, prices.dates[0]);
    assert_eq!(w.end_date, prices.dates[124]);
    let early = WindowAnchor::Center { date: prices.dates[61].clone(), width: 125 };
    let err = cut_window(&prices, "early", &early, &config).unwrap_err().to_string();
    assert!(err.contains("short by 1"), "{err}");
}

#[test]
fn catalog_failures_do_not_stop_the_batch() {
    let prices = prices_from(&factor_returns(8, 300, 0.5, 7));
    let config = WindowConfig::default();
    assert!(classify_catalog(&prices, &[], &config).rows.is_empty());
    let catalog = vec![
        marketstates::trajectory::CatalogEntry {
            name: "ok".into(),
            anchor: WindowAnchor::Center { date: prices.dates[100].clone(), width: 125 },
        },
        marketstates::trajectory::CatalogEntry {
            name: "missing".into(),
            anchor: WindowAnchor::Center { date: "1900-01-01".into(), width: 125 },
        },
    ];
    let report = classify_catalog(&prices, &catalog, &config);
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].name, "missing");
}
