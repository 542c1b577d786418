//! Event windows as trajectories in correlation-matrix space and the
//! variance-ratio classifier.
//!
//! A window of price days is turned into epochs, the epochs into ζ, and ζ
//! into a 3-D MDS path. With `x, y, z` the MDS axes in descending eigenvalue
//! order, a window is critical when `var_y / var_x` falls below a threshold.

use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrmat::{epoch_correlations, EpochCorrelationSeries, EpochSpec};
use crate::error::{invalid, Error, Result};
use crate::formats;
use crate::geometry::{classical_mds, consecutive_distances, similarity_matrix, Embedding, SimilarityMatrix};
use crate::ingest::{log_returns, PricePanel};

pub const DEFAULT_WIDTH: usize = 125;
pub const DEFAULT_THRESHOLD: f64 = 0.4;

/// How a window is placed on the price panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAnchor {
    /// `width` price days with `date` in the middle.
    Center { date: String, width: usize },
    /// Explicit first and last price day, inclusive.
    Range { start: String, end: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub spec: EpochSpec,
    pub epsilon: f64,
    pub dim: usize,
    pub threshold: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            spec: EpochSpec::default(),
            epsilon: 0.0,
            dim: 3,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub name: String,
    pub start_date: String,
    pub end_date: String,
    pub center_date: Option<String>,
    pub epochs: EpochCorrelationSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Classification {
    Critical,
    Normal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub name: String,
    pub start_date: String,
    pub end_date: String,
    /// `n_epochs x dim`.
    pub coordinates: DMatrix<f64>,
    pub step_lengths: Vec<f64>,
    /// Population variance of each MDS axis.
    pub axis_variances: Vec<f64>,
    /// `var_y / var_x`; `None` when the window has no spread at all.
    pub var_ratio: Option<f64>,
    pub classification: Classification,
    pub zero_variance: bool,
    /// Set when the axis variances are not in descending order.
    pub axis_order_violation: bool,
}

impl TrajectoryReport {
    pub fn var_x(&self) -> f64 {
        self.axis_variances.first().copied().unwrap_or(0.0)
    }

    pub fn var_y(&self) -> f64 {
        self.axis_variances.get(1).copied().unwrap_or(0.0)
    }

    pub fn var_z(&self) -> f64 {
        self.axis_variances.get(2).copied().unwrap_or(0.0)
    }

    pub fn row(&self) -> TrajectoryRow {
        TrajectoryRow {
            name: self.name.clone(),
            start: self.start_date.clone(),
            end: self.end_date.clone(),
            var_x: self.var_x(),
            var_y: self.var_y(),
            var_z: self.var_z(),
            var_ratio: self.var_ratio,
            classification: self.classification,
            n_epochs: self.coordinates.nrows(),
            max_step_over_median: step_jump_ratio(&self.step_lengths),
        }
    }
}

/// One table row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub name: String,
    pub start: String,
    pub end: String,
    pub var_x: f64,
    pub var_y: f64,
    pub var_z: f64,
    pub var_ratio: Option<f64>,
    pub classification: Classification,
    pub n_epochs: usize,
    pub max_step_over_median: Option<f64>,
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
}

/// Largest step divided by the median step.
pub fn step_jump_ratio(steps: &[f64]) -> Option<f64> {
    let med = median(steps)?;
    let max = steps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (med > 0.0).then(|| max / med)
}

/// Slice `panel` to the window and compute its (optionally power-mapped) epochs.
pub fn cut_window(panel: &PricePanel, name: &str, anchor: &WindowAnchor, config: &WindowConfig) -> Result<EventWindow> {
    let (start, end, center) = match anchor {
        WindowAnchor::Center { date, width } => {
            if *width < 2 {
                return Err(invalid!("window width must be at least 2"));
            }
            let c = panel
                .date_index(date)
                .ok_or_else(|| Error::Data(format!("{name}: centre date {date} is not a trading day in the panel")))?;
            let before = (width - 1) / 2;
            let after = width - 1 - before;
            if c < before {
                return Err(Error::Data(format!(
                    "{name}: need {before} trading days before {date}, only {c} available (short by {})",
                    before - c
                )));
            }
            let available_after = panel.n_dates() - 1 - c;
            if available_after < after {
                return Err(Error::Data(format!(
                    "{name}: need {after} trading days after {date}, only {available_after} available (short by {})",
                    after - available_after
                )));
            }
            (c - before, c + after, Some(date.clone()))
        }
        WindowAnchor::Range { start, end } => {
            let s = panel
                .date_index(start)
                .ok_or_else(|| Error::Data(format!("{name}: start date {start} not in panel")))?;
            let e = panel
                .date_index(end)
                .ok_or_else(|| Error::Data(format!("{name}: end date {end} not in panel")))?;
            if e <= s {
                return Err(invalid!("{name}: end date {end} is not after start date {start}"));
            }
            (s, e, None)
        }
    };
    let slice = panel.slice_dates(start, end + 1);
    let returns = log_returns(&slice);
    let raw = epoch_correlations(&returns, config.spec)?;
    let epochs = if config.epsilon > 0.0 {
        raw.power_mapped(config.epsilon)?
    } else {
        raw
    };
    Ok(EventWindow {
        name: name.to_string(),
        start_date: panel.dates[start].clone(),
        end_date: panel.dates[end].clone(),
        center_date: center,
        epochs,
    })
}

/// Euclidean distances between consecutive embedded epochs.
pub fn step_lengths(embedding: &Embedding) -> Result<Vec<f64>> {
    if embedding.coordinates.nrows() < 2 {
        return Err(invalid!("need at least two points for step lengths"));
    }
    Ok(consecutive_distances(&embedding.coordinates))
}

/// Classify a window from its dissimilarity matrix.
pub fn analyze_dissimilarity(
    name: &str,
    start_date: &str,
    end_date: &str,
    zeta: &SimilarityMatrix,
    dim: usize,
    threshold: f64,
) -> Result<TrajectoryReport> {
    if dim < 2 {
        return Err(invalid!("the variance ratio needs at least 2 MDS axes"));
    }
    if zeta.size() < dim + 1 {
        return Err(Error::Data(format!(
            "{name}: {} epochs are too few for a {dim}-D embedding",
            zeta.size()
        )));
    }
    let embedding = classical_mds(zeta, dim)?;
    let steps = step_lengths(&embedding)?;
    let n = embedding.coordinates.nrows() as f64;
    let axis_variances: Vec<f64> = (0..dim)
        .map(|a| {
            let col = embedding.coordinates.column(a);
            let mean = col.mean();
            col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
        })
        .collect();
    let axis_order_violation = axis_variances.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-9));
    if axis_order_violation {
        warn!("{name}: MDS axis variances are not descending: {axis_variances:?}");
    }
    let zero_variance = !(axis_variances[0] > 0.0);
    let (var_ratio, classification) = if zero_variance {
        (None, Classification::Normal)
    } else {
        let r = axis_variances[1] / axis_variances[0];
        let class = if r < threshold {
            Classification::Critical
        } else {
            Classification::Normal
        };
        (Some(r), class)
    };
    Ok(TrajectoryReport {
        name: name.to_string(),
        start_date: start_date.to_string(),
        end_date: end_date.to_string(),
        coordinates: embedding.coordinates,
        step_lengths: steps,
        axis_variances,
        var_ratio,
        classification,
        zero_variance,
        axis_order_violation,
    })
}

pub fn analyze_trajectory(window: &EventWindow, config: &WindowConfig) -> Result<TrajectoryReport> {
    let zeta = similarity_matrix(&window.epochs)?;
    analyze_dissimilarity(
        &window.name,
        &window.start_date,
        &window.end_date,
        &zeta,
        config.dim,
        config.threshold,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub anchor: WindowAnchor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogFailure {
    pub name: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct CatalogReport {
    pub rows: Vec<TrajectoryReport>,
    pub failures: Vec<CatalogFailure>,
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    threshold: f64,
    rows: Vec<TrajectoryRow>,
    failures: Vec<CatalogFailure>,
}

/// Run every catalog entry; failures are collected and do not stop the batch.
pub fn classify_catalog(panel: &PricePanel, catalog: &[CatalogEntry], config: &WindowConfig) -> CatalogReport {
    let outcomes: Vec<Result<TrajectoryReport>> = catalog
        .par_iter()
        .map(|e| {
            let w = cut_window(panel, &e.name, &e.anchor, config)?;
            analyze_trajectory(&w, config)
        })
        .collect();
    let mut report = CatalogReport::default();
    for (entry, outcome) in catalog.iter().zip(outcomes) {
        match outcome {
            Ok(r) => report.rows.push(r),
            Err(e) => report.failures.push(CatalogFailure {
                name: entry.name.clone(),
                error: e.to_string(),
            }),
        }
    }
    report
}

/// Read an events CSV: `name,center_date` or `name,start_date,end_date`.
pub fn read_catalog(path: impl AsRef<Path>, width: usize) -> Result<Vec<CatalogEntry>> {
    let path = path.as_ref();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(1, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let ranged = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["name", "center_date"] => false,
        ["name", "start_date", "end_date"] => true,
        _ => return Err(parse_err(1, "expected `name,center_date` or `name,start_date,end_date`".into())),
    };
    let mut entries = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(i + 2, e.to_string()))?;
        let name = rec[0].trim().to_string();
        let anchor = if ranged {
            WindowAnchor::Range {
                start: rec[1].trim().to_string(),
                end: rec[2].trim().to_string(),
            }
        } else {
            WindowAnchor::Center {
                date: rec[1].trim().to_string(),
                width,
            }
        };
        entries.push(CatalogEntry { name, anchor });
    }
    Ok(entries)
}

pub fn write_report(report: &TrajectoryReport, path: impl AsRef<Path>) -> Result<()> {
    formats::write_json(path, &report.row())
}

pub fn write_catalog_report(report: &CatalogReport, threshold: f64, path: impl AsRef<Path>) -> Result<()> {
    let file = CatalogFile {
        threshold,
        rows: report.rows.iter().map(TrajectoryReport::row).collect(),
        failures: report.failures.clone(),
    };
    formats::write_json(path, &file)
}
