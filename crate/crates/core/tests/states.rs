mod common;

use common::{blobs, gaussian, rng};
use marketstates::nalgebra::DMatrix;
use marketstates::states::{
    build_state_model_from, fit_matrices, jumps_into_top, kmeans_ensemble, best_run, optimize_matrices,
    read_model, select_optimum, select_optimum_with_preference, topdown_cluster, transition_counts, write_model,
    InitMethod, OptimizationSurface, SearchSettings, SurfacePoint,
};
use marketstates::geometry::SimilarityMatrix;

fn point(k: usize, epsilon: f64, sigma: f64) -> SurfacePoint {
    SurfacePoint { k, epsilon, sigma_d_intra: sigma, mean_d_intra: 0.0, n_inits: 2 }
}

/// Uniform-correlation matrices at four levels plus symmetric noise.
fn level_matrices(per: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut r = rng(seed);
    let n = 6;
    let mut out = Vec::new();
    for level in [0.1, 0.35, 0.6, 0.85] {
        for _ in 0..per {
            let mut m = DMatrix::from_element(n, n, level);
            for i in 0..n {
                for j in (i + 1)..n {
                    let e = 0.01 * gaussian(&mut r);
                    m[(i, j)] += e;
                    m[(j, i)] += e;
                }
                m[(i, i)] = 1.0;
            }
            out.push(m);
        }
    }
    out
}

fn settings(n_inits: usize) -> SearchSettings {
    SearchSettings { n_inits, seed: 3, dim: 3, init: InitMethod::PlusPlus }
}

#[test]
fn more_clusters_never_spread_more() {
    let pts = blobs(5, 12, 3, 2.0, 21);
    let mut prev = f64::INFINITY;
    for k in 1..=8 {
        let best = best_run(kmeans_ensemble(&pts, k, 60, 17, InitMethod::PlusPlus).unwrap()).unwrap();
        assert!(best.objective() <= prev + 1e-12, "k = {k}");
        prev = best.objective();
    }
}

#[test]
fn relabelled_points_give_the_same_partition() {
    let pts = blobs(3, 10, 2, 10.0, 2);
    let run = best_run(kmeans_ensemble(&pts, 3, 20, 1, InitMethod::PlusPlus).unwrap()).unwrap();
    let rev = DMatrix::from_fn(pts.nrows(), pts.ncols(), |i, d| pts[(pts.nrows() - 1 - i, d)]);
    let run_rev = best_run(kmeans_ensemble(&rev, 3, 20, 99, InitMethod::PlusPlus).unwrap()).unwrap();
    let n = pts.nrows();
    for i in 0..n {
        for j in 0..n {
            let same = run.labels[i] == run.labels[j];
            let same_rev = run_rev.labels[n - 1 - i] == run_rev.labels[n - 1 - j];
            assert_eq!(same, same_rev);
        }
    }
    assert!((run.d_intra - run_rev.d_intra).abs() < 1e-12);
}

#[test]
fn four_levels_give_four_states() {
    let raw = level_matrices(12, 8);
    let ks: Vec<usize> = (3..=6).collect();
    let surface = optimize_matrices(&raw, &ks, &[0.0], settings(100)).unwrap();
    let (k, _) = select_optimum(&surface, 3).unwrap();
    assert_eq!(k, 4, "{:?}", surface.grid);
}

#[test]
fn selection_rule() {
    let s = OptimizationSurface { grid: vec![point(4, 0.5, 0.02), point(5, 0.9, 0.01)] };
    assert_eq!(select_optimum(&s, 2).unwrap(), (5, 0.9));
    let s = OptimizationSurface { grid: vec![point(5, 0.3, 0.01), point(6, 0.3, 0.01)] };
    assert_eq!(select_optimum(&s, 2).unwrap(), (6, 0.3));
    let s = OptimizationSurface { grid: vec![point(5, 0.4, 0.01), point(5, 0.2, 0.01)] };
    assert_eq!(select_optimum(&s, 2).unwrap(), (5, 0.2));
    let s = OptimizationSurface { grid: vec![point(2, 0.0, 0.0), point(4, 0.1, 0.5)] };
    assert_eq!(select_optimum(&s, 4).unwrap(), (4, 0.1));
    assert!(select_optimum(&s, 5).is_err());
}

#[test]
fn preference_hook_reranks_top_candidates() {
    let s = OptimizationSurface { grid: vec![point(4, 0.1, 0.01), point(5, 0.2, 0.02), point(6, 0.3, 0.03)] };
    let jumps = |k: usize, _e: f64| Ok(if k == 5 { 0 } else { 3 });
    assert_eq!(select_optimum_with_preference(&s, 2, 3, jumps).unwrap(), (5, 0.2));
    assert_eq!(select_optimum_with_preference(&s, 2, 1, jumps).unwrap(), (4, 0.1));
    let flat = |_k: usize, _e: f64| Ok(1);
    assert_eq!(select_optimum_with_preference(&s, 2, 3, flat).unwrap(), (4, 0.1));
}

#[test]
fn transitions_count_consecutive_pairs() {
    let states = [0, 0, 1, 2, 2, 0, 2];
    let c = transition_counts(&states, 3);
    assert_eq!(c, vec![vec![1, 1, 1], vec![0, 0, 1], vec![1, 0, 1]]);
    assert_eq!(c.iter().flatten().sum::<u64>(), states.len() as u64 - 1);
    assert_eq!(jumps_into_top(&c), 2);
}

#[test]
fn states_are_ordered_by_mean_correlation() {
    let raw = level_matrices(8, 4);
    let fit = fit_matrices(&raw, 4, 0.0, settings(20), vec![String::new(); 32], vec![String::new(); 6]).unwrap();
    let m = &fit.model;
    assert!(m.state_mean_corr.windows(2).all(|w| w[0] < w[1]));
    for (e, &s) in m.state_of.iter().enumerate() {
        assert_eq!(s, e / 8);
    }
    assert_eq!(m.occupancy(), vec![8; 4]);
    // the average of each state is the mean of its members
    let direct = raw[..8].iter().fold(DMatrix::zeros(6, 6), |acc, x| acc + x) / 8.0;
    assert!((&m.avg_corr[0] - direct).abs().max() < 1e-14);
}

#[test]
fn model_file_round_trip() {
    let raw = level_matrices(5, 6);
    let dates: Vec<String> = (0..20).map(|i| format!("2002-01-{:02}", i + 1)).collect();
    let labels: Vec<String> = (0..6).map(|i| format!("T{i}")).collect();
    let fit = fit_matrices(&raw, 3, 0.5, settings(10), dates, labels).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    write_model(&fit.model, &path).unwrap();
    assert_eq!(read_model(&path).unwrap(), fit.model);
}

#[test]
fn empty_clusters_are_rejected() {
    let raw = level_matrices(2, 1);
    let refs: Vec<&DMatrix<f64>> = raw.iter().collect();
    let mut run = best_run(kmeans_ensemble(&blobs(1, 8, 2, 0.0, 1), 2, 2, 1, InitMethod::Uniform).unwrap()).unwrap();
    run.labels = vec![0; 8];
    assert!(build_state_model_from(&refs, &run, vec![], vec![]).is_err());
}

#[test]
fn topdown_splits_two_blobs() {
    let pts = blobs(2, 15, 2, 30.0, 12);
    let d = SimilarityMatrix::from_matrix(common::euclidean(&pts)).unwrap();
    let labels = topdown_cluster(&d, 3.0, 2, 5).unwrap();
    let mut distinct = labels.clone();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), 2);
    assert!(labels[..15].iter().all(|&l| l == labels[0]));
    assert!(labels[15..].iter().all(|&l| l == labels[15]));
    assert!(topdown_cluster(&d, 0.0, 2, 5).is_err());
}

#[test]
fn every_epoch_alone_has_no_spread() {
    let pts = blobs(2, 5, 3, 1.0, 8);
    let run = best_run(kmeans_ensemble(&pts, 10, 5, 2, InitMethod::PlusPlus).unwrap()).unwrap();
    assert_eq!(run.d_intra, 0.0);
}
