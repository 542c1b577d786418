//! Wishart orthogonal ensembles and the Marčenko–Pastur law.
//!
//! A realisation is `W = A·Aᵀ / T` with `A` an `N x T` matrix of i.i.d.
//! Gaussian entries. For `Q = T/N` the limiting eigenvalue density is
//!
//! ```text
//! ρ(λ) = Q / (2π σ²) · sqrt((λ_max - λ)(λ - λ_min)) / λ,   λ_min,max = σ² (1 ∓ 1/√Q)²
//! ```
//!
//! plus a point mass `1 - Q` at zero when `Q < 1`.

use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrmat::power_map_values;
use crate::error::{invalid, Error, Result};
use crate::formats::{self, fmt_f64, sidecar_path};
use crate::linalg;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WishartSpec {
    pub n: usize,
    pub t: usize,
    /// Variance of the Gaussian entries.
    pub sigma2: f64,
    /// Mean of the Gaussian entries.
    pub mean: f64,
    pub ensemble_size: usize,
    pub seed: u64,
}

impl WishartSpec {
    pub fn new(n: usize, t: usize, ensemble_size: usize, seed: u64) -> Self {
        WishartSpec {
            n,
            t,
            sigma2: 1.0,
            mean: 0.0,
            ensemble_size,
            seed,
        }
    }

    pub fn q(&self) -> f64 {
        self.t as f64 / self.n as f64
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.ensemble_size == 0 {
            return Err(invalid!("N, T and ensemble size must all be at least 1"));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(invalid!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !self.mean.is_finite() {
            return Err(invalid!("mean must be finite"));
        }
        Ok(())
    }
}

/// Analytic Marčenko–Pastur reference for a given aspect ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpReference {
    pub q: f64,
    pub sigma2: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl MpReference {
    pub fn new(q: f64, sigma2: f64) -> Result<Self> {
        let (lambda_min, lambda_max) = mp_bounds(q, sigma2)?;
        Ok(MpReference {
            q,
            sigma2,
            lambda_min,
            lambda_max,
        })
    }

    pub fn density(&self, lambda: f64) -> f64 {
        density_unchecked(lambda, self.q, self.sigma2, self.lambda_min, self.lambda_max)
    }

    /// Weight of the point mass at zero.
    pub fn zero_mass(&self) -> f64 {
        mp_zero_mass(self.q)
    }

    /// Integral of the continuous density over `[a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(self.lambda_min);
        let hi = b.min(self.lambda_max);
        if hi <= lo {
            return 0.0;
        }
        // λ(θ) = λ_min + w(1 - cos θ)/2 removes the square-root endpoint singularities.
        let w = self.lambda_max - self.lambda_min;
        let theta = |x: f64| (1.0 - 2.0 * (x - self.lambda_min) / w).clamp(-1.0, 1.0).acos();
        let (t0, t1) = (theta(lo), theta(hi));
        let scale = self.q / (2.0 * std::f64::consts::PI * self.sigma2) * (w / 2.0).powi(2);
        let f = |t: f64| {
            let lambda = self.lambda_min + w * (1.0 - t.cos()) / 2.0;
            if lambda <= 0.0 {
                // Q = 1: the integrand sin²θ/λ stays finite as θ → 0.
                return 0.0;
            }
            scale * t.sin().powi(2) / lambda
        };
        let panels = 256;
        let h = (t1 - t0) / panels as f64;
        let mut acc = f(t0) + f(t1);
        for i in 1..panels {
            let x = t0 + h * i as f64;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * h / 3.0
    }
}

/// Support bounds `σ²(1 ∓ 1/√Q)²`.
pub fn mp_bounds(q: f64, sigma2: f64) -> Result<(f64, f64)> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(invalid!("Q must be positive, got {q}"));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(invalid!("sigma2 must be positive, got {sigma2}"));
    }
    let r = 1.0 / q.sqrt();
    Ok((sigma2 * (1.0 - r).powi(2), sigma2 * (1.0 + r).powi(2)))
}

fn density_unchecked(lambda: f64, q: f64, sigma2: f64, lo: f64, hi: f64) -> f64 {
    if lambda <= lo || lambda >= hi || lambda <= 0.0 {
        return 0.0;
    }
    q / (2.0 * std::f64::consts::PI * sigma2) * ((hi - lambda) * (lambda - lo)).sqrt() / lambda
}

/// Continuous part of the Marčenko–Pastur density. The zero point mass of
/// `Q < 1` is reported by [`mp_zero_mass`], never here.
pub fn mp_density(lambda: f64, q: f64, sigma2: f64) -> Result<f64> {
    let (lo, hi) = mp_bounds(q, sigma2)?;
    Ok(density_unchecked(lambda, q, sigma2, lo, hi))
}

pub fn mp_zero_mass(q: f64) -> f64 {
    (1.0 - q).max(0.0)
}

/// Draw `ensemble_size` realisations; realisation `i` uses seed `seed ^ i`.
pub fn sample_woe(spec: &WishartSpec) -> Result<Vec<DMatrix<f64>>> {
    spec.validate()?;
    let normal = Normal::new(spec.mean, spec.sigma2.sqrt())
        .map_err(|e| invalid!("bad Gaussian parameters: {e}"))?;
    let realisations = (0..spec.ensemble_size)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(spec.seed ^ i as u64);
            let mut entries = Vec::with_capacity(spec.n * spec.t);
            for _ in 0..spec.n * spec.t {
                entries.push(normal.sample(&mut rng));
            }
            let a = DMatrix::from_row_slice(spec.n, spec.t, &entries);
            let mut w = &a * a.transpose() / spec.t as f64;
            for r in 0..spec.n {
                for c in (r + 1)..spec.n {
                    w[(c, r)] = w[(r, c)];
                }
            }
            w
        })
        .collect();
    Ok(realisations)
}

/// Pooled eigenvalue histogram, normalised as a density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    /// `bins + 1` increasing edges.
    pub bin_edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Pooled eigenvalues in realisation order, each block descending.
    pub eigenvalues: Vec<f64>,
    pub reference: Option<MpReference>,
}

impl SpectralDensity {
    pub fn mean(&self) -> f64 {
        linalg::mean_var(&self.eigenvalues).0
    }

    pub fn variance(&self) -> f64 {
        linalg::mean_var(&self.eigenvalues).1
    }

    /// `max λ - min λ` over the pooled eigenvalues.
    pub fn support_width(&self) -> f64 {
        let (lo, hi) = self.eigenvalues.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
        hi - lo
    }

    pub fn with_reference(mut self, reference: MpReference) -> Self {
        self.reference = Some(reference);
        self
    }

    /// `Σ |ρ_emp - ρ_MP| · width` over the bins, with the analytic law
    /// bin-averaged and its zero mass placed in the bin containing 0.
    pub fn l1_distance(&self, reference: &MpReference) -> f64 {
        let mut total = 0.0;
        for (i, d) in self.density.iter().enumerate() {
            let (a, b) = (self.bin_edges[i], self.bin_edges[i + 1]);
            let mut mass = reference.mass_between(a, b);
            let last = i + 1 == self.density.len();
            if a <= 0.0 && (0.0 < b || (last && b == 0.0)) {
                mass += reference.zero_mass();
            }
            total += (d * (b - a) - mass).abs();
        }
        // Analytic mass that falls beyond the histogram range.
        let lo = self.bin_edges[0];
        let hi = *self.bin_edges.last().unwrap();
        total += reference.mass_between(f64::NEG_INFINITY, lo) + reference.mass_between(hi, f64::INFINITY);
        total
    }

    /// Fraction of pooled eigenvalues outside `[lo, hi]`.
    pub fn fraction_outside(&self, lo: f64, hi: f64) -> f64 {
        let outside = self.eigenvalues.iter().filter(|&&x| x < lo || x > hi).count();
        outside as f64 / self.eigenvalues.len() as f64
    }
}

/// Histogram the pooled spectra of `matrices` into `bins` equal-width bins
/// spanning `[min(0, λ_lowest), λ_highest]`.
pub fn empirical_spectrum(matrices: &[DMatrix<f64>], bins: usize) -> Result<SpectralDensity> {
    if bins == 0 {
        return Err(invalid!("bin count must be at least 1"));
    }
    let Some(first) = matrices.first() else {
        return Err(invalid!("no matrices to analyse"));
    };
    let n = first.nrows();
    for m in matrices {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Data(format!(
                "matrices differ in size: {}x{} vs {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
        linalg::check_symmetric(m, 1e-12)?;
    }
    let blocks: Vec<Vec<f64>> = matrices.par_iter().map(linalg::symmetric_eigenvalues).collect();
    let eigenvalues: Vec<f64> = blocks.into_iter().flatten().collect();
    let lo = eigenvalues.iter().copied().fold(0.0f64, f64::min);
    let mut hi = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    for &x in &eigenvalues {
        let idx = (((x - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    let total = eigenvalues.len() as f64;
    let density = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / (total * (bin_edges[i + 1] - bin_edges[i])))
        .collect();
    Ok(SpectralDensity {
        bin_edges,
        density,
        eigenvalues,
        reference: None,
    })
}

/// Sample an ensemble, power-map every realisation, and histogram the pooled spectrum.
pub fn powermapped_spectrum(spec: &WishartSpec, epsilon: f64, bins: usize) -> Result<SpectralDensity> {
    let raw = sample_woe(spec)?;
    let mapped = raw
        .par_iter()
        .map(|w| power_map_values(w, epsilon))
        .collect::<Result<Vec<_>>>()?;
    let density = empirical_spectrum(&mapped, bins)?;
    Ok(density.with_reference(MpReference::new(spec.q(), spec.sigma2)?))
}

/// Summary written next to a density CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmtReport {
    pub n: usize,
    pub t: usize,
    pub ensemble_size: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub q: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub l1_distance: f64,
    pub fraction_outside: f64,
    pub n_eigenvalues: usize,
    pub spectral_mean: f64,
    pub spectral_variance: f64,
}

pub fn rmt_validate(spec: &WishartSpec, epsilon: f64, bins: usize) -> Result<(SpectralDensity, RmtReport)> {
    let density = powermapped_spectrum(spec, epsilon, bins)?;
    let reference = density.reference.expect("reference attached");
    let report = RmtReport {
        n: spec.n,
        t: spec.t,
        ensemble_size: spec.ensemble_size,
        seed: spec.seed,
        epsilon,
        q: reference.q,
        lambda_min: reference.lambda_min,
        lambda_max: reference.lambda_max,
        l1_distance: density.l1_distance(&reference),
        fraction_outside: density.fraction_outside(reference.lambda_min, reference.lambda_max),
        n_eigenvalues: density.eigenvalues.len(),
        spectral_mean: density.mean(),
        spectral_variance: density.variance(),
    };
    Ok((density, report))
}

/// Density CSV (`bin_left,bin_right,density`) with a JSON sidecar holding `report`.
pub fn write_density(density: &SpectralDensity, report: &RmtReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("bin_left,bin_right,density\n");
    for (i, d) in density.density.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(density.bin_edges[i]),
            fmt_f64(density.bin_edges[i + 1]),
            fmt_f64(*d)
        ));
    }
    formats::write_file(path, out.as_bytes())?;
    formats::write_json(sidecar_path(path), report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_for_q4() {
        let (lo, hi) = mp_bounds(4.0, 1.0).unwrap();
        assert!((lo - 0.25).abs() < 1e-15);
        assert!((hi - 2.25).abs() < 1e-15);
    }

    #[test]
    fn density_vanishes_outside_support() {
        assert_eq!(mp_density(0.1, 4.0, 1.0).unwrap(), 0.0);
        assert_eq!(mp_density(3.0, 4.0, 1.0).unwrap(), 0.0);
        assert!(mp_density(1.0, 4.0, 1.0).unwrap() > 0.0);
        assert!(mp_density(1.0, -1.0, 1.0).is_err());
        assert!(mp_density(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_mass_only_below_q1() {
        assert_eq!(mp_zero_mass(4.0), 0.0);
        assert!((mp_zero_mass(0.25) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn scalar_wishart_estimates_variance() {
        let mut spec = WishartSpec::new(1, 100_000, 1, 3);
        spec.sigma2 = 2.0;
        let w = sample_woe(&spec).unwrap();
        // sd of the estimator is σ² sqrt(2/T) ≈ 0.009
        assert!((w[0][(0, 0)] - 2.0).abs() < 0.05);
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = WishartSpec::new(5, 12, 3, 99);
        assert_eq!(sample_woe(&spec).unwrap(), sample_woe(&spec).unwrap());
        let other = WishartSpec { seed: 100, ..spec };
        assert_ne!(sample_woe(&spec).unwrap(), sample_woe(&other).unwrap());
    }

    #[test]
    fn identity_spectrum_sits_in_one_bin() {
        let eye = vec![DMatrix::<f64>::identity(4, 4); 3];
        let s = empirical_spectrum(&eye, 10).unwrap();
        let nonzero: Vec<usize> = s.density.iter().enumerate().filter(|(_, d)| **d > 0.0).map(|(i, _)| i).collect();
        assert_eq!(nonzero, vec![9]);
        assert!(s.bin_edges[9] < 1.0 && s.bin_edges[10] == 1.0);
        let mass: f64 = s.density[9] * (s.bin_edges[10] - s.bin_edges[9]);
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_symmetric_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(empirical_spectrum(&[m], 10).is_err());
        assert!(empirical_spectrum(&[], 10).is_err());
    }
}
