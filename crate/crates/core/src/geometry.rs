//! Epoch dissimilarities and classical (Torgerson) multidimensional scaling.
//!
//! The dissimilarity of two epochs is the mean absolute difference over all
//! `N²` entries of their correlation matrices. Self-pairs on the diagonal are
//! included in the average; for raw correlations they contribute zero.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrmat::EpochCorrelationSeries;
use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Symmetric `Fr x Fr` matrix of epoch dissimilarities with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: DMatrix<f64>,
}

impl SimilarityMatrix {
    /// Wrap a precomputed dissimilarity matrix after checking its shape and
    /// basic metric properties.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Data("dissimilarity matrix must be square".into()));
        }
        for i in 0..values.nrows() {
            if values[(i, i)] != 0.0 {
                return Err(Error::Data(format!("non-zero diagonal at {i}")));
            }
            for j in 0..values.ncols() {
                let v = values[(i, j)];
                if !(v >= 0.0) || v != values[(j, i)] {
                    return Err(Error::Data(format!(
                        "entry ({i},{j}) = {v} is negative, non-finite or asymmetric"
                    )));
                }
            }
        }
        Ok(SimilarityMatrix { values })
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    /// The same dissimilarities multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> SimilarityMatrix {
        SimilarityMatrix {
            values: &self.values * factor,
        }
    }

    /// Sub-matrix over the given epoch positions.
    pub fn select(&self, idx: &[usize]) -> SimilarityMatrix {
        SimilarityMatrix {
            values: DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.values[(idx[a], idx[b])]),
        }
    }
}

/// Packs a symmetric matrix into its upper triangle; off-diagonal entries
/// carry weight 2 so that a weighted sum equals the sum over all `N²` entries.
fn pack_upper(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        out.push(m[(i, i)]);
        for j in (i + 1)..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn packed_weights(n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        w.push(1.0);
        w.extend(std::iter::repeat_n(2.0, n - i - 1));
    }
    w
}

/// Dissimilarity matrix over any sequence of equally sized symmetric matrices.
pub fn similarity_from_matrices(matrices: &[&DMatrix<f64>]) -> Result<SimilarityMatrix> {
    if matrices.len() < 2 {
        return Err(invalid!("need at least two epochs, got {}", matrices.len()));
    }
    let n = matrices[0].nrows();
    if let Some(bad) = matrices.iter().find(|m| m.nrows() != n || m.ncols() != n) {
        return Err(Error::Data(format!(
            "matrix sizes differ: {}x{} vs {n}x{n}",
            bad.nrows(),
            bad.ncols()
        )));
    }
    let packed: Vec<Vec<f64>> = matrices.par_iter().map(|m| pack_upper(m)).collect();
    let weights = packed_weights(n);
    let norm = (n * n) as f64;
    let fr = matrices.len();
    let rows: Vec<Vec<f64>> = (0..fr)
        .into_par_iter()
        .map(|a| {
            ((a + 1)..fr)
                .map(|b| {
                    let mut acc = 0.0;
                    for ((x, y), w) in packed[a].iter().zip(&packed[b]).zip(&weights) {
                        acc += w * (x - y).abs();
                    }
                    acc / norm
                })
                .collect()
        })
        .collect();
    let mut values = DMatrix::<f64>::zeros(fr, fr);
    for (a, row) in rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let b = a + 1 + k;
            values[(a, b)] = v;
            values[(b, a)] = v;
        }
    }
    Ok(SimilarityMatrix { values })
}

pub fn similarity_matrix(series: &EpochCorrelationSeries) -> Result<SimilarityMatrix> {
    let refs: Vec<&DMatrix<f64>> = series.matrices.iter().map(|m| &m.values).collect();
    similarity_from_matrices(&refs)
}

/// Eigenvalue bookkeeping for an embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdsDiagnostics {
    /// Full double-centred spectrum, descending.
    pub spectrum: Vec<f64>,
    /// Eigenvalues below `-tol` (dropped).
    pub clipped_count: usize,
    /// `Σ|negative λ| / Σ|λ|`.
    pub clipped_mass_fraction: f64,
    /// Requested axes left at zero for lack of positive eigenvalues.
    pub padded_axes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `Fr x D`, columns by descending eigenvalue.
    pub coordinates: DMatrix<f64>,
    /// Retained eigenvalues (0 for padded axes).
    pub eigenvalues: Vec<f64>,
    pub dim: usize,
    pub diagnostics: MdsDiagnostics,
}

impl Embedding {
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coordinates.row(i).iter().copied().collect()
    }

    /// Embedding restricted to the first `dim` axes.
    pub fn truncated(&self, dim: usize) -> Embedding {
        Embedding {
            coordinates: self.coordinates.columns(0, dim).into_owned(),
            eigenvalues: self.eigenvalues[..dim].to_vec(),
            dim,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Double-centred Gram matrix `-½ J (ζ∘ζ) J`.
pub fn double_center(dissim: &DMatrix<f64>) -> DMatrix<f64> {
    let n = dissim.nrows();
    let sq = dissim.map(|d| d * d);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut b = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    b
}

/// Classical MDS into `dim` dimensions, `1 <= dim <= Fr - 1`.
///
/// Non-positive eigenvalues are dropped and their axes zero-filled.
pub fn classical_mds(dissim: &SimilarityMatrix, dim: usize) -> Result<Embedding> {
    let fr = dissim.size();
    if dim < 1 || dim + 1 > fr {
        return Err(invalid!("MDS dimension must be in 1..={}, got {dim}", fr.saturating_sub(1)));
    }
    let b = double_center(&dissim.values);
    let (values, vectors) = linalg::sorted_symmetric_eigen(&b);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;

    let negative: Vec<f64> = values.iter().copied().filter(|&v| v < -tol).collect();
    let abs_total: f64 = values.iter().map(|v| v.abs()).sum();
    let clipped_mass_fraction = if abs_total > 0.0 {
        negative.iter().map(|v| v.abs()).sum::<f64>() / abs_total
    } else {
        0.0
    };

    let mut coordinates = DMatrix::<f64>::zeros(fr, dim);
    let mut retained = vec![0.0; dim];
    let mut padded = 0;
    for axis in 0..dim {
        let lambda = values[axis];
        if lambda <= tol {
            padded += 1;
            continue;
        }
        let root = lambda.sqrt();
        let v = &vectors[axis];
        let mean = v.mean();
        for i in 0..fr {
            coordinates[(i, axis)] = root * (v[i] - mean);
        }
        retained[axis] = lambda;
    }
    if padded > 0 {
        warn!("classical MDS: only {} of {dim} axes have positive eigenvalues", dim - padded);
    }
    Ok(Embedding {
        coordinates,
        eigenvalues: retained,
        dim,
        diagnostics: MdsDiagnostics {
            spectrum: values,
            clipped_count: negative.len(),
            clipped_mass_fraction,
            padded_axes: padded,
        },
    })
}

/// Euclidean distances between consecutive rows of `coordinates`.
pub fn consecutive_distances(coordinates: &DMatrix<f64>) -> Vec<f64> {
    (1..coordinates.nrows())
        .map(|i| (coordinates.row(i) - coordinates.row(i - 1)).norm())
        .collect()
}

/// Correlation between consecutive-epoch distances at each requested
/// dimension and at the reference dimension `Fr - 1`.
pub fn dimension_fidelity(dissim: &SimilarityMatrix, dims: &[usize]) -> Result<Vec<(usize, f64)>> {
    if dims.is_empty() {
        return Err(invalid!("no dimensions requested"));
    }
    let fr = dissim.size();
    if fr < 3 {
        return Err(invalid!("need at least 3 epochs for fidelity, got {fr}"));
    }
    let d_max = fr - 1;
    if let Some(bad) = dims.iter().find(|&&d| d < 1 || d > d_max) {
        return Err(invalid!("dimension {bad} outside 1..={d_max}"));
    }
    let full = classical_mds(dissim, d_max)?;
    let reference = consecutive_distances(&full.coordinates);
    dims.iter()
        .map(|&d| {
            let steps = consecutive_distances(&full.coordinates.columns(0, d).into_owned());
            linalg::pearson(&steps, &reference)
                .map(|r| (d, r))
                .ok_or_else(|| Error::Numeric(format!("constant distance sequence at D = {d}")))
        })
        .collect()
}
