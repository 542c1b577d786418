mod common;

use common::{blobs, euclidean, rng};
use marketstates::geometry::{classical_mds, consecutive_distances, dimension_fidelity, similarity_from_matrices, SimilarityMatrix};
use marketstates::nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn random_corr(n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let a = DMatrix::from_fn(n, 3 * n, |_, _| common::gaussian(&mut r));
    let c = &a * a.transpose();
    let d: Vec<f64> = (0..n).map(|i| c[(i, i)].sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| c[(i, j)] / (d[i] * d[j]))
}

#[test]
fn zeta_matches_direct_mean() {
    let ms: Vec<DMatrix<f64>> = (0..5).map(|s| random_corr(7, s)).collect();
    let refs: Vec<&DMatrix<f64>> = ms.iter().collect();
    let z = similarity_from_matrices(&refs).unwrap();
    for a in 0..5 {
        for b in 0..5 {
            let direct = (&ms[a] - &ms[b]).abs().sum() / 49.0;
            assert!((z.values[(a, b)] - direct).abs() < 1e-14);
        }
    }
}

#[test]
fn euclidean_configuration_is_recovered() {
    let points = blobs(3, 8, 3, 4.0, 11);
    let dissim = SimilarityMatrix::from_matrix(euclidean(&points)).unwrap();
    for dim in 3..6 {
        let emb = classical_mds(&dissim, dim).unwrap();
        let back = euclidean(&emb.coordinates);
        assert!((back - &dissim.values).abs().max() < 1e-9, "dim {dim}");
    }
    let emb = classical_mds(&dissim, 5).unwrap();
    assert_eq!(emb.diagnostics.padded_axes, 2);
}

#[test]
fn relabelling_epochs_permutes_the_embedding() {
    let points = blobs(2, 10, 4, 3.0, 5);
    let d = euclidean(&points);
    let mut perm: Vec<usize> = (0..d.nrows()).collect();
    perm.shuffle(&mut rng(9));
    let dp = DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| d[(perm[i], perm[j])]);
    let a = classical_mds(&SimilarityMatrix::from_matrix(d).unwrap(), 3).unwrap();
    let b = classical_mds(&SimilarityMatrix::from_matrix(dp).unwrap(), 3).unwrap();
    // axes may flip sign, distances may not change
    let da = euclidean(&a.coordinates);
    let db = euclidean(&b.coordinates);
    for i in 0..perm.len() {
        for j in 0..perm.len() {
            assert!((db[(i, j)] - da[(perm[i], perm[j])]).abs() < 1e-9);
        }
    }
}

#[test]
fn embedding_is_deterministic() {
    let ms: Vec<DMatrix<f64>> = (0..12).map(|s| random_corr(6, 100 + s)).collect();
    let refs: Vec<&DMatrix<f64>> = ms.iter().collect();
    let z = similarity_from_matrices(&refs).unwrap();
    let a = classical_mds(&z, 3).unwrap();
    let b = classical_mds(&z, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dimension_bounds() {
    let points = blobs(1, 4, 2, 0.0, 1);
    let dissim = SimilarityMatrix::from_matrix(euclidean(&points)).unwrap();
    assert!(classical_mds(&dissim, 0).is_err());
    assert!(classical_mds(&dissim, 4).is_err());
    assert!(classical_mds(&dissim, 3).is_ok());
    assert!(dimension_fidelity(&dissim, &[4]).is_err());
}

#[test]
fn full_dimension_fidelity_is_one() {
    let points = blobs(2, 6, 5, 2.0, 3);
    let dissim = SimilarityMatrix::from_matrix(euclidean(&points)).unwrap();
    let fid = dimension_fidelity(&dissim, &[11]).unwrap();
    assert!((fid[0].1 - 1.0).abs() < 1e-12);
    let emb = classical_mds(&dissim, 5).unwrap();
    let steps = consecutive_distances(&emb.coordinates);
    for (i, s) in steps.iter().enumerate() {
        assert!((s - dissim.values[(i, i + 1)]).abs() < 1e-9);
    }
}

#[test]
fn malformed_dissimilarities_are_rejected() {
    let mut m = DMatrix::from_element(3, 3, 1.0);
    assert!(SimilarityMatrix::from_matrix(m.clone()).is_err());
    m.fill_diagonal(0.0);
    m[(0, 1)] = 2.0;
    assert!(SimilarityMatrix::from_matrix(m).is_err());
    assert!(SimilarityMatrix::from_matrix(DMatrix::zeros(2, 3)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zeta_is_a_metric(seed in 0u64..10_000, n in 2usize..8) {
        let ms: Vec<DMatrix<f64>> = (0..3).map(|s| random_corr(n, seed * 3 + s)).collect();
        let refs: Vec<&DMatrix<f64>> = ms.iter().collect();
        let z = similarity_from_matrices(&refs).unwrap().values;
        prop_assert_eq!(z[(0, 0)], 0.0);
        prop_assert_eq!(z[(0, 1)], z[(1, 0)]);
        prop_assert!(z[(0, 2)] <= z[(0, 1)] + z[(1, 2)] + 1e-15);
        prop_assert!(z[(0, 1)] <= 2.0);
    }
}
