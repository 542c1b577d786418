#![allow(dead_code)]

use marketstates::ingest::{PricePanel, ReturnPanel};
use marketstates::nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One-factor returns: `beta * market + noise`.
pub fn factor_returns(n: usize, len: usize, beta: f64, seed: u64) -> ReturnPanel {
    let mut r = rng(seed);
    let market: Vec<f64> = (0..len).map(|_| gaussian(&mut r)).collect();
    let returns = DMatrix::from_fn(n, len, |_, t| beta * market[t] + gaussian(&mut r));
    ReturnPanel {
        tickers: (0..n).map(|i| format!("S{i:02}")).collect(),
        dates: (0..len).map(|t| format!("2001-{:02}-{:02}", 1 + t / 28, 1 + t % 28)).collect(),
        returns,
        sector_of: None,
    }
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

pub fn euclidean(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows();
    DMatrix::from_fn(n, n, |i, j| (points.row(i) - points.row(j)).norm())
}

/// `blobs` Gaussian clusters of `per` points with unit spread, centres on a
/// line `spacing` apart.
pub fn blobs(blobs: usize, per: usize, dim: usize, spacing: f64, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(blobs * per, dim, |i, d| {
        let centre = if d == 0 { (i / per) as f64 * spacing } else { 0.0 };
        centre + gaussian(&mut r)
    })
}

/// Prices starting at 100 whose log-returns are `returns`.
pub fn prices_from(returns: &ReturnPanel) -> PricePanel {
    let (n, len) = returns.returns.shape();
    let mut prices = DMatrix::from_element(n, len + 1, 100.0f64.ln());
    for t in 0..len {
        for i in 0..n {
            prices[(i, t + 1)] = prices[(i, t)] + returns.returns[(i, t)];
        }
    }
    PricePanel {
        tickers: returns.tickers.clone(),
        dates: marketstates::demo::business_days(len + 1),
        prices: prices.map(f64::exp),
        sector_of: returns.sector_of.clone(),
        dropped: Vec::new(),
    }
}
