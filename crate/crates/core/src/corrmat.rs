//! Rolling-epoch Pearson correlation matrices and the power map.
//!
//! Epoch `τ` (1-based) covers return columns
//! `[(τ-1)·shift, (τ-1)·shift + T - 1]`, so a panel with `L` returns yields
//! `floor((L - T) / shift) + 1` epochs.

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::formats::{self, fmt_f64, sidecar_path};
use crate::ingest::ReturnPanel;

/// Epoch length and shift, both in trading days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSpec {
    pub length: usize,
    pub shift: usize,
}

impl Default for EpochSpec {
    fn default() -> Self {
        EpochSpec {
            length: 20,
            shift: 1,
        }
    }
}

impl EpochSpec {
    pub fn new(length: usize, shift: usize) -> Result<Self> {
        if length < 2 {
            return Err(invalid!("epoch length must be at least 2, got {length}"));
        }
        if shift < 1 {
            return Err(invalid!("epoch shift must be at least 1"));
        }
        Ok(EpochSpec { length, shift })
    }

    /// Number of epochs that fit into `n_returns` return columns.
    pub fn count(&self, n_returns: usize) -> Result<usize> {
        if self.length > n_returns {
            return Err(Error::Data(format!(
                "epoch length {} needs at least {} returns, only {} available",
                self.length, self.length, n_returns
            )));
        }
        Ok((n_returns - self.length) / self.shift + 1)
    }

    /// First return column of 1-based epoch `tau`.
    pub fn start_column(&self, tau: usize) -> usize {
        (tau - 1) * self.shift
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    /// 1-based epoch index.
    pub epoch: usize,
    pub start_date: String,
    pub values: DMatrix<f64>,
    /// Cumulative power-map exponent offset; 0 for raw correlations.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochCorrelationSeries {
    pub spec: EpochSpec,
    pub tickers: Vec<String>,
    pub matrices: Vec<CorrelationMatrix>,
}

impl EpochCorrelationSeries {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn dates(&self) -> Vec<String> {
        self.matrices.iter().map(|m| m.start_date.clone()).collect()
    }

    /// Apply the power map to every epoch.
    pub fn power_mapped(&self, epsilon: f64) -> Result<EpochCorrelationSeries> {
        let matrices = self
            .matrices
            .par_iter()
            .map(|m| power_map(m, epsilon))
            .collect::<Result<Vec<_>>>()?;
        Ok(EpochCorrelationSeries {
            spec: self.spec,
            tickers: self.tickers.clone(),
            matrices,
        })
    }

    /// Epochs `[start, end)` (0-based positions) as a new series.
    pub fn slice(&self, start: usize, end: usize) -> EpochCorrelationSeries {
        EpochCorrelationSeries {
            spec: self.spec,
            tickers: self.tickers.clone(),
            matrices: self.matrices[start..end].to_vec(),
        }
    }
}

/// Population Pearson correlation of the rows of `block` (`N x T`).
///
/// Rows with zero variance correlate 0 with every other row and 1 with
/// themselves. Returns the matrix and the indices of such rows.
pub fn pearson_matrix(block: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let (n, t) = block.shape();
    let tf = t as f64;
    let mut z = DMatrix::<f64>::zeros(n, t);
    let mut degenerate = Vec::new();
    for i in 0..n {
        let row = block.row(i);
        let mean = row.iter().sum::<f64>() / tf;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / tf;
        if var > 0.0 {
            let sd = var.sqrt();
            for j in 0..t {
                z[(i, j)] = (block[(i, j)] - mean) / sd;
            }
        } else {
            degenerate.push(i);
        }
    }
    let product = &z * z.transpose();
    let mut c = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (product[(i, j)] / tf).clamp(-1.0, 1.0);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    (c, degenerate)
}

/// Correlation matrices over every epoch of `panel`.
pub fn epoch_correlations(panel: &ReturnPanel, spec: EpochSpec) -> Result<EpochCorrelationSeries> {
    let spec = EpochSpec::new(spec.length, spec.shift)?;
    let fr = spec.count(panel.len())?;
    let matrices = (1..=fr)
        .into_par_iter()
        .map(|tau| {
            let start = spec.start_column(tau);
            let block = panel.returns.columns(start, spec.length).into_owned();
            let (values, degenerate) = pearson_matrix(&block);
            for i in degenerate {
                warn!(
                    "{} has zero variance in epoch {tau} (from {})",
                    panel.tickers[i], panel.dates[start]
                );
            }
            CorrelationMatrix {
                epoch: tau,
                start_date: panel.dates[start].clone(),
                values,
                epsilon: 0.0,
            }
        })
        .collect();
    Ok(EpochCorrelationSeries {
        spec,
        tickers: panel.tickers.clone(),
        matrices,
    })
}

/// `x -> sign(x)·|x|^(1+ε)` applied to every entry.
pub fn power_map_values(values: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(invalid!("power-map epsilon must be a finite value >= 0, got {epsilon}"));
    }
    if epsilon == 0.0 {
        return Ok(values.clone());
    }
    let exponent = 1.0 + epsilon;
    Ok(values.map(|x| x.signum() * x.abs().powf(exponent)))
}

pub fn power_map(matrix: &CorrelationMatrix, epsilon: f64) -> Result<CorrelationMatrix> {
    let values = power_map_values(&matrix.values, epsilon)?;
    Ok(CorrelationMatrix {
        epoch: matrix.epoch,
        start_date: matrix.start_date.clone(),
        values,
        epsilon: (1.0 + matrix.epsilon) * (1.0 + epsilon) - 1.0,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesMeta {
    format: String,
    n: usize,
    fr: usize,
    epoch_length: usize,
    shift: usize,
    epsilon: f64,
    tickers: Vec<String>,
}

/// Write a series as one CSV block per epoch plus a JSON sidecar.
///
/// Header: `epoch,start_date,row,<tickers...>`; each epoch contributes `N`
/// rows labelled by the row ticker.
pub fn write_series(series: &EpochCorrelationSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,start_date,row");
    for t in &series.tickers {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for m in &series.matrices {
        for (i, ticker) in series.tickers.iter().enumerate() {
            out.push_str(&format!("{},{},{}", m.epoch, m.start_date, ticker));
            for j in 0..series.tickers.len() {
                out.push(',');
                out.push_str(&fmt_f64(m.values[(i, j)]));
            }
            out.push('\n');
        }
    }
    formats::write_file(path, out.as_bytes())?;
    let meta = SeriesMeta {
        format: "marketstates-series/1".into(),
        n: series.tickers.len(),
        fr: series.len(),
        epoch_length: series.spec.length,
        shift: series.spec.shift,
        epsilon: series.matrices.first().map_or(0.0, |m| m.epsilon),
        tickers: series.tickers.clone(),
    };
    formats::write_json(sidecar_path(path), &meta)
}

pub fn read_series(path: impl AsRef<Path>) -> Result<EpochCorrelationSeries> {
    let path = path.as_ref();
    let meta: SeriesMeta = formats::read_json(sidecar_path(path))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let n = meta.n;
    let mut lines = text.lines().enumerate().skip(1);
    let mut matrices = Vec::with_capacity(meta.fr);
    for _ in 0..meta.fr {
        let mut values = DMatrix::<f64>::zeros(n, n);
        let mut epoch = 0;
        let mut start_date = String::new();
        for i in 0..n {
            let (lineno, line) = lines.next().ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "series file truncated".into(),
            })?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n + 3 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected {} fields, found {}", n + 3, fields.len()),
                });
            }
            epoch = fields[0].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "bad epoch index".into(),
            })?;
            start_date = fields[1].to_string();
            for j in 0..n {
                values[(i, j)] = formats::parse_f64(fields[j + 3], path, lineno + 1)?;
            }
        }
        matrices.push(CorrelationMatrix {
            epoch,
            start_date,
            values,
            epsilon: meta.epsilon,
        });
    }
    Ok(EpochCorrelationSeries {
        spec: EpochSpec::new(meta.epoch_length, meta.shift)?,
        tickers: meta.tickers,
        matrices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(rows: &[Vec<f64>]) -> ReturnPanel {
        let n = rows.len();
        let t = rows[0].len();
        ReturnPanel {
            tickers: (0..n).map(|i| format!("S{i}")).collect(),
            dates: (0..t).map(|d| format!("2020-01-{:02}", d + 1)).collect(),
            returns: DMatrix::from_fn(n, t, |i, j| rows[i][j]),
            sector_of: None,
        }
    }

    #[test]
    fn scaled_series_correlate_perfectly() {
        let x = vec![0.1, -0.2, 0.05, 0.3, -0.1, 0.0];
        let p = panel(&[x.clone(), x.iter().map(|v| 2.0 * v).collect(), x.iter().map(|v| -v).collect()]);
        let s = epoch_correlations(&p, EpochSpec::new(4, 1).unwrap()).unwrap();
        assert_eq!(s.len(), 3);
        for m in &s.matrices {
            assert!((m.values[(0, 1)] - 1.0).abs() < 1e-14);
            assert!((m.values[(0, 2)] + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn epoch_count_closed_form() {
        let spec = EpochSpec::new(20, 1).unwrap();
        assert_eq!(spec.count(3522).unwrap(), 3503);
        assert_eq!(spec.count(3458).unwrap(), 3439);
        assert_eq!(EpochSpec::new(20, 10).unwrap().count(100).unwrap(), 9);
        let err = spec.count(10).unwrap_err();
        assert!(err.to_string().contains("20") && err.to_string().contains("10"));
    }

    #[test]
    fn invalid_epoch_spec() {
        assert!(EpochSpec::new(1, 1).is_err());
        assert!(EpochSpec::new(5, 0).is_err());
    }

    #[test]
    fn zero_variance_row_is_isolated() {
        let p = panel(&[vec![0.0; 5], vec![0.1, 0.2, -0.1, 0.0, 0.3]]);
        let s = epoch_correlations(&p, EpochSpec::new(5, 1).unwrap()).unwrap();
        let c = &s.matrices[0].values;
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(c[(1, 0)], 0.0);
    }

    #[test]
    fn power_map_examples() {
        let m = CorrelationMatrix {
            epoch: 1,
            start_date: "d".into(),
            values: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]),
            epsilon: 0.0,
        };
        let p = power_map(&m, 1.0).unwrap();
        assert!((p.values[(0, 1)] - 0.25).abs() < 1e-15);
        assert!((p.values[(1, 0)] + 0.25).abs() < 1e-15);
        assert_eq!(p.values[(0, 0)], 1.0);
        assert_eq!(p.epsilon, 1.0);
        let same = power_map(&m, 0.0).unwrap();
        assert_eq!(same, m);
        assert!(power_map(&m, -0.1).is_err());
        assert!(power_map(&m, f64::NAN).is_err());
    }
}
