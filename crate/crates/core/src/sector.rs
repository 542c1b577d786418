//! Sector-averaged correlation matrices and sector-level market states.
//!
//! `M_ab` is the mean of `C_ij` over `i` in sector `a` and `j` in sector `b`.
//! Within a sector the self-pairs `i = j` are left out by default, so the
//! diagonal of `M` carries the mean intra-sector correlation.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corrmat::{epoch_correlations, CorrelationMatrix, EpochCorrelationSeries, EpochSpec};
use crate::error::{Error, Result};
use crate::ingest::{ReturnPanel, SectorMap};
use crate::states::{fit_matrices, optimize_matrices, OptimizationSurface, SearchSettings, StateFit, StateModel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalConvention {
    /// Intra-sector blocks average over `i != j` only.
    #[default]
    ExcludeSelf,
    /// Intra-sector blocks include the unit self-correlations.
    IncludeSelf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorMatrix {
    pub epoch: usize,
    pub sectors: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Ticker positions grouped by sector, sectors in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorLayout {
    pub sectors: Vec<String>,
    pub members: Vec<Vec<usize>>,
}

impl SectorLayout {
    pub fn new(tickers: &[String], sector_of: &SectorMap) -> Result<Self> {
        let mut unmapped = Vec::new();
        let labels: BTreeSet<&String> = tickers
            .iter()
            .filter_map(|t| {
                let s = sector_of.get(t);
                if s.is_none() {
                    unmapped.push(t.as_str());
                }
                s
            })
            .collect();
        if !unmapped.is_empty() {
            return Err(Error::Data(format!("tickers without a sector: {}", unmapped.join(", "))));
        }
        let sectors: Vec<String> = labels.into_iter().cloned().collect();
        let members = sectors
            .iter()
            .map(|s| {
                tickers
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| &sector_of[*t] == s)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        Ok(SectorLayout { sectors, members })
    }

    pub fn len(&self) -> usize {
        self.sectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sectors.is_empty()
    }

    /// Average `c` into an `N_S x N_S` block matrix.
    pub fn average(&self, c: &DMatrix<f64>, convention: DiagonalConvention) -> DMatrix<f64> {
        let ns = self.len();
        let mut m = DMatrix::<f64>::zeros(ns, ns);
        for a in 0..ns {
            for b in a..ns {
                let mut sum = 0.0;
                let mut count = 0usize;
                for &i in &self.members[a] {
                    for &j in &self.members[b] {
                        if a == b && i == j && convention == DiagonalConvention::ExcludeSelf {
                            continue;
                        }
                        sum += c[(i, j)];
                        count += 1;
                    }
                }
                let v = if count == 0 { 1.0 } else { sum / count as f64 };
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        m
    }

    fn warn_singletons(&self, convention: DiagonalConvention) {
        if convention == DiagonalConvention::ExcludeSelf {
            for (s, m) in self.sectors.iter().zip(&self.members) {
                if m.len() == 1 {
                    warn!("sector {s} has a single stock; its diagonal entry is set to 1");
                }
            }
        }
    }
}

pub fn sector_average(
    matrix: &CorrelationMatrix,
    tickers: &[String],
    sector_of: &SectorMap,
    convention: DiagonalConvention,
) -> Result<SectorMatrix> {
    let layout = SectorLayout::new(tickers, sector_of)?;
    layout.warn_singletons(convention);
    Ok(SectorMatrix {
        epoch: matrix.epoch,
        sectors: layout.sectors.clone(),
        values: layout.average(&matrix.values, convention),
    })
}

/// Sector-averaged matrix for every epoch of a raw series.
pub fn sector_series(
    series: &EpochCorrelationSeries,
    sector_of: &SectorMap,
    convention: DiagonalConvention,
) -> Result<Vec<SectorMatrix>> {
    let layout = SectorLayout::new(&series.tickers, sector_of)?;
    layout.warn_singletons(convention);
    Ok(series
        .matrices
        .iter()
        .map(|m| SectorMatrix {
            epoch: m.epoch,
            sectors: layout.sectors.clone(),
            values: layout.average(&m.values, convention),
        })
        .collect())
}

fn sector_map_of(panel: &ReturnPanel) -> Result<&SectorMap> {
    panel
        .sector_of
        .as_ref()
        .ok_or_else(|| Error::Data("panel has no sector map".into()))
}

/// Fit sector-level states: power-map `M`, ζ over the `M` series, MDS,
/// k-means, and a state model averaged from raw `M`.
pub fn sector_state_pipeline(
    panel: &ReturnPanel,
    spec: EpochSpec,
    k: usize,
    epsilon: f64,
    settings: SearchSettings,
    convention: DiagonalConvention,
) -> Result<StateFit> {
    let series = epoch_correlations(panel, spec)?;
    sector_fit_series(&series, sector_map_of(panel)?, k, epsilon, settings, convention)
}

pub fn sector_fit_series(
    series: &EpochCorrelationSeries,
    sector_of: &SectorMap,
    k: usize,
    epsilon: f64,
    settings: SearchSettings,
    convention: DiagonalConvention,
) -> Result<StateFit> {
    let ms = sector_series(series, sector_of, convention)?;
    let sectors = ms.first().map(|m| m.sectors.clone()).unwrap_or_default();
    let raw: Vec<DMatrix<f64>> = ms.into_iter().map(|m| m.values).collect();
    fit_matrices(&raw, k, epsilon, settings, series.dates(), sectors)
}

/// `(k, ε)` search on sector-averaged matrices.
pub fn optimize_sectors(
    series: &EpochCorrelationSeries,
    sector_of: &SectorMap,
    k_range: &[usize],
    epsilon_grid: &[f64],
    settings: SearchSettings,
    convention: DiagonalConvention,
) -> Result<OptimizationSurface> {
    let raw: Vec<DMatrix<f64>> = sector_series(series, sector_of, convention)?
        .into_iter()
        .map(|m| m.values)
        .collect();
    optimize_matrices(&raw, k_range, epsilon_grid, settings)
}

/// Diagnostics only: correlate per-sector average return series instead of
/// averaging the stock correlation matrix.
pub fn sector_return_correlations(panel: &ReturnPanel, spec: EpochSpec) -> Result<EpochCorrelationSeries> {
    let layout = SectorLayout::new(&panel.tickers, sector_map_of(panel)?)?;
    let averaged = DMatrix::from_fn(layout.len(), panel.len(), |s, t| {
        let m = &layout.members[s];
        m.iter().map(|&i| panel.returns[(i, t)]).sum::<f64>() / m.len() as f64
    });
    let reduced = ReturnPanel {
        tickers: layout.sectors.clone(),
        dates: panel.dates.clone(),
        returns: averaged,
        sector_of: None,
    };
    epoch_correlations(&reduced, spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementReport {
    /// Displacement `sector state - stock state` → number of epochs.
    pub histogram: BTreeMap<i64, usize>,
    pub max_abs_displacement: u64,
}

/// Per-epoch difference between sector-level and stock-level state numbers.
pub fn displacement(stock_states: &[usize], sector_states: &[usize]) -> Result<DisplacementReport> {
    if stock_states.len() != sector_states.len() {
        return Err(Error::Data(format!(
            "state sequences differ in length: {} stock vs {} sector",
            stock_states.len(),
            sector_states.len()
        )));
    }
    let mut histogram = BTreeMap::new();
    let mut max_abs = 0;
    for (&stock, &sector) in stock_states.iter().zip(sector_states) {
        let d = sector as i64 - stock as i64;
        *histogram.entry(d).or_insert(0) += 1;
        max_abs = max_abs.max(d.unsigned_abs());
    }
    Ok(DisplacementReport {
        histogram,
        max_abs_displacement: max_abs,
    })
}

pub fn displacement_between(stock: &StateModel, sector: &StateModel) -> Result<DisplacementReport> {
    displacement(&stock.state_of, &sector.state_of)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> SectorMap {
        pairs.iter().map(|(t, s)| (t.to_string(), s.to_string())).collect()
    }

    fn cm(values: DMatrix<f64>) -> CorrelationMatrix {
        CorrelationMatrix {
            epoch: 1,
            start_date: "d".into(),
            values,
            epsilon: 0.0,
        }
    }

    #[test]
    fn singleton_sectors_fall_back_to_unit_diagonal() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let tickers = vec!["A".to_string(), "B".to_string()];
        let m = sector_average(&cm(c), &tickers, &map(&[("A", "x"), ("B", "y")]), DiagonalConvention::ExcludeSelf)
            .unwrap();
        assert_eq!(m.values, DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]));
    }

    #[test]
    fn constant_off_diagonal_gives_constant_blocks() {
        let n = 5;
        let c = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.4 });
        let tickers: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
        let sectors = map(&[("T0", "a"), ("T1", "a"), ("T2", "b"), ("T3", "b"), ("T4", "b")]);
        let m = sector_average(&cm(c), &tickers, &sectors, DiagonalConvention::ExcludeSelf).unwrap();
        assert!(m.values.iter().all(|&v| (v - 0.4).abs() < 1e-15));
        assert_eq!(m.sectors, vec!["a", "b"]);
    }

    #[test]
    fn include_self_counts_the_unit_diagonal() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let tickers = vec!["A".to_string(), "B".to_string()];
        let m = sector_average(&cm(c), &tickers, &map(&[("A", "x"), ("B", "x")]), DiagonalConvention::IncludeSelf)
            .unwrap();
        assert!((m.values[(0, 0)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn unmapped_ticker_is_an_error() {
        let c = DMatrix::<f64>::identity(2, 2);
        let tickers = vec!["A".to_string(), "B".to_string()];
        assert!(sector_average(&cm(c), &tickers, &map(&[("A", "x")]), DiagonalConvention::ExcludeSelf).is_err());
    }

    #[test]
    fn displacement_of_identical_sequences() {
        let r = displacement(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert_eq!(r.histogram, BTreeMap::from([(0, 4)]));
        assert_eq!(r.max_abs_displacement, 0);
    }

    #[test]
    fn displacement_signs() {
        let r = displacement(&[0, 1, 2, 3], &[1, 1, 0, 3]).unwrap();
        assert_eq!(r.histogram, BTreeMap::from([(-2, 1), (0, 2), (1, 1)]));
        assert_eq!(r.max_abs_displacement, 2);
        assert!(displacement(&[0], &[0, 1]).is_err());
    }
}
