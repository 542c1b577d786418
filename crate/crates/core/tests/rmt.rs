mod common;

use common::eigenvalues;
use marketstates::corrmat::pearson_matrix;
use marketstates::nalgebra::DMatrix;
use marketstates::rmt::{mp_bounds, mp_density, mp_zero_mass, sample_woe, MpReference, WishartSpec};

/// ∫ρ over the support with λ = c - r·cos θ, which removes the square-root
/// edges; midpoint rule in θ.
fn integrate_density(q: f64, sigma2: f64) -> f64 {
    let (lo, hi) = mp_bounds(q, sigma2).unwrap();
    let (c, r) = ((hi + lo) / 2.0, (hi - lo) / 2.0);
    let steps = 200_000;
    let h = std::f64::consts::PI / steps as f64;
    (0..steps)
        .map(|i| {
            let theta = (i as f64 + 0.5) * h;
            mp_density(c - r * theta.cos(), q, sigma2).unwrap() * r * theta.sin()
        })
        .sum::<f64>()
        * h
}

#[test]
fn density_integrates_to_one_above_q_one() {
    for q in [1.5, 4.0, 10.0] {
        let total = integrate_density(q, 1.0);
        assert!((total - 1.0).abs() < 1e-6, "Q = {q}: {total}");
    }
    assert!((integrate_density(4.0, 2.5) - 1.0).abs() < 1e-6);
}

#[test]
fn continuous_part_carries_mass_q_below_one() {
    for q in [0.25, 0.5, 0.8] {
        let total = integrate_density(q, 1.0);
        assert!((total - q).abs() < 1e-6, "Q = {q}: {total}");
        assert!((mp_zero_mass(q) - (1.0 - q)).abs() < 1e-15);
    }
}

#[test]
fn bounds_and_bin_masses() {
    assert_eq!(mp_bounds(4.0, 1.0).unwrap(), (0.25, 2.25));
    let r = MpReference::new(4.0, 1.0).unwrap();
    assert!((r.mass_between(0.0, 10.0) - 1.0).abs() < 1e-9);
    let split = r.mass_between(0.25, 1.0) + r.mass_between(1.0, 2.25);
    assert!((split - 1.0).abs() < 1e-9);
    assert!(mp_bounds(0.0, 1.0).is_err());
}

#[test]
fn wishart_samples_are_symmetric_and_psd() {
    let spec = WishartSpec::new(30, 60, 4, 11);
    for w in sample_woe(&spec).unwrap() {
        assert!((&w - w.transpose()).abs().max() <= 1e-12);
        assert!(*eigenvalues(&w).last().unwrap() > -1e-8);
    }
    let again = sample_woe(&spec).unwrap();
    assert_eq!(again, sample_woe(&spec).unwrap());
}

#[test]
fn rank_deficient_wishart_has_the_zero_eigenvalues() {
    let (n, t) = (40, 15);
    for w in sample_woe(&WishartSpec::new(n, t, 3, 5)).unwrap() {
        let zeros = eigenvalues(&w).iter().filter(|l| l.abs() < 1e-10).count();
        assert!(zeros >= n - t, "{zeros}");
    }
}

#[test]
fn demeaned_correlations_lose_one_more_rank() {
    let (n, t) = (40, 15);
    let mut r = common::rng(8);
    let block = DMatrix::from_fn(n, t, |_, _| common::gaussian(&mut r));
    let (c, _) = pearson_matrix(&block);
    let zeros = eigenvalues(&c).iter().filter(|l| l.abs() < 1e-10).count();
    assert_eq!(zeros, n - t + 1);
}
