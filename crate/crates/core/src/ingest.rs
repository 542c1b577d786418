//! Loading daily closing prices, continuity filtering and log-returns.
//!
//! The price CSV has a header `date,TICKER1,TICKER2,...` followed by one row
//! per trading day. A cell that is empty or the literal `NaN` is missing.
//! The continuity test runs on the raw data; survivors are then forward-filled.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{self, sidecar_path};

/// Ticker → sector label.
pub type SectorMap = BTreeMap<String, String>;

/// Rules deciding which raw price series are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuityPolicy {
    /// Longest run of missing raw entries a retained ticker may have.
    pub max_consecutive_missing: usize,
}

impl Default for ContinuityPolicy {
    fn default() -> Self {
        ContinuityPolicy {
            max_consecutive_missing: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedTicker {
    pub ticker: String,
    pub reason: String,
}

/// Gap-free adjusted closing prices, one row per ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub tickers: Vec<String>,
    pub dates: Vec<String>,
    /// `N x T_tot`, strictly positive.
    pub prices: DMatrix<f64>,
    pub sector_of: Option<SectorMap>,
    /// Tickers removed while loading, with the reason.
    pub dropped: Vec<DroppedTicker>,
}

/// Log-returns `ln S(t+1) - ln S(t)`, dated at the start of each interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub tickers: Vec<String>,
    pub dates: Vec<String>,
    /// `N x (T_tot - 1)`.
    pub returns: DMatrix<f64>,
    pub sector_of: Option<SectorMap>,
}

impl PricePanel {
    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    /// Attach a sector map. Every ticker must be mapped.
    pub fn with_sectors(mut self, sectors: SectorMap) -> Result<Self> {
        let missing: Vec<&str> = self
            .tickers
            .iter()
            .filter(|t| !sectors.contains_key(*t))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "tickers without a sector: {}",
                missing.join(", ")
            )));
        }
        let restricted = self
            .tickers
            .iter()
            .map(|t| (t.clone(), sectors[t].clone()))
            .collect();
        self.sector_of = Some(restricted);
        Ok(self)
    }

    /// Contiguous slice of date columns `[start, end)`.
    pub fn slice_dates(&self, start: usize, end: usize) -> PricePanel {
        PricePanel {
            tickers: self.tickers.clone(),
            dates: self.dates[start..end].to_vec(),
            prices: self.prices.columns(start, end - start).into_owned(),
            sector_of: self.sector_of.clone(),
            dropped: Vec::new(),
        }
    }

    pub fn date_index(&self, date: &str) -> Option<usize> {
        self.dates.binary_search_by(|d| d.as_str().cmp(date)).ok()
    }
}

impl ReturnPanel {
    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn len(&self) -> usize {
        self.returns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.ncols() == 0
    }
}

enum Column {
    Kept(Vec<f64>),
    Dropped(String),
}

fn filter_column(raw: &[Option<f64>], policy: ContinuityPolicy) -> Column {
    if let Some(bad) = raw.iter().flatten().find(|p| !(**p > 0.0) || !p.is_finite()) {
        return Column::Dropped(format!("non-positive or non-finite price {bad}"));
    }
    if raw.first().is_none_or(|v| v.is_none()) {
        return Column::Dropped("missing first entry".to_string());
    }
    let mut run = 0;
    let mut longest = 0;
    for v in raw {
        if v.is_none() {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    if longest > policy.max_consecutive_missing {
        return Column::Dropped(format!(
            "{longest} consecutive missing entries (limit {})",
            policy.max_consecutive_missing
        ));
    }
    let mut last = 0.0;
    let filled = raw
        .iter()
        .map(|v| {
            if let Some(p) = v {
                last = *p;
            }
            last
        })
        .collect();
    Column::Kept(filled)
}

fn parse_cell(cell: &str) -> std::result::Result<Option<f64>, String> {
    let cell = cell.trim();
    if cell.is_empty() || cell == "NaN" {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("cannot parse price {cell:?}"))
}

/// Read a price CSV and apply the continuity policy.
pub fn load_prices(path: impl AsRef<Path>, policy: ContinuityPolicy) -> Result<PricePanel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prices(&text, path, policy)
}

pub(crate) fn parse_prices(text: &str, path: &Path, policy: ContinuityPolicy) -> Result<PricePanel> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() < 2 || !header[0].trim().eq_ignore_ascii_case("date") {
        return Err(parse_err(
            1,
            "header must be `date,TICKER1,...` with at least one ticker".into(),
        ));
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut dates: Vec<String> = Vec::new();
    let mut raw: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let date = record[0].trim().to_string();
        if date.is_empty() {
            return Err(parse_err(line, "empty date".into()));
        }
        if let Some(prev) = dates.last() {
            if date.as_str() <= prev.as_str() {
                return Err(parse_err(
                    line,
                    format!("dates not strictly increasing: {prev} then {date}"),
                ));
            }
        }
        dates.push(date);
        for (col, cell) in record.iter().skip(1).enumerate() {
            raw[col].push(parse_cell(cell).map_err(|m| parse_err(line, m))?);
        }
    }
    if dates.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least two dates, found {}",
            path.display(),
            dates.len()
        )));
    }

    let mut tickers = Vec::new();
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for (name, values) in names.into_iter().zip(&raw) {
        match filter_column(values, policy) {
            Column::Kept(v) => {
                tickers.push(name);
                columns.push(v);
            }
            Column::Dropped(reason) => {
                warn!("dropping {name}: {reason}");
                dropped.push(DroppedTicker {
                    ticker: name,
                    reason,
                });
            }
        }
    }
    if tickers.is_empty() {
        return Err(Error::Data(format!(
            "{}: no ticker survived the continuity filter",
            path.display()
        )));
    }
    let t = dates.len();
    let prices = DMatrix::from_fn(tickers.len(), t, |i, j| columns[i][j]);
    Ok(PricePanel {
        tickers,
        dates,
        prices,
        sector_of: None,
        dropped,
    })
}

/// Read a `ticker,sector` CSV.
pub fn load_sector_map(path: impl AsRef<Path>) -> Result<SectorMap> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    let mut map = SectorMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: row + 2,
            message: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: row + 2,
                message: "expected `ticker,sector`".into(),
            });
        }
        map.insert(record[0].trim().to_string(), record[1].trim().to_string());
    }
    Ok(map)
}

/// Per-ticker log-returns with a one-day step.
pub fn log_returns(panel: &PricePanel) -> ReturnPanel {
    let n = panel.n_tickers();
    let t = panel.n_dates();
    let returns = DMatrix::from_fn(n, t.saturating_sub(1), |i, j| {
        panel.prices[(i, j + 1)].ln() - panel.prices[(i, j)].ln()
    });
    ReturnPanel {
        tickers: panel.tickers.clone(),
        dates: panel.dates[..t.saturating_sub(1)].to_vec(),
        returns,
        sector_of: panel.sector_of.clone(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelMeta {
    format: String,
    n: usize,
    t_tot: usize,
    first_date: String,
    last_date: String,
    dropped: Vec<DroppedTicker>,
    sectors: Option<SectorMap>,
}

/// Write a panel as a dense price CSV plus a `<file>.json` metadata sidecar.
pub fn write_panel(panel: &PricePanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("date");
    for t in &panel.tickers {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for (j, date) in panel.dates.iter().enumerate() {
        out.push_str(date);
        for i in 0..panel.n_tickers() {
            out.push(',');
            out.push_str(&formats::fmt_f64(panel.prices[(i, j)]));
        }
        out.push('\n');
    }
    formats::write_file(path, out.as_bytes())?;
    let meta = PanelMeta {
        format: "marketstates-panel/1".into(),
        n: panel.n_tickers(),
        t_tot: panel.n_dates(),
        first_date: panel.dates.first().cloned().unwrap_or_default(),
        last_date: panel.dates.last().cloned().unwrap_or_default(),
        dropped: panel.dropped.clone(),
        sectors: panel.sector_of.clone(),
    };
    formats::write_json(sidecar_path(path), &meta)
}

/// Read a panel written by [`write_panel`].
pub fn read_panel(path: impl AsRef<Path>) -> Result<PricePanel> {
    let path = path.as_ref();
    let mut panel = load_prices(path, ContinuityPolicy::default())?;
    let meta: PanelMeta = formats::read_json(sidecar_path(path))?;
    if meta.n != panel.n_tickers() || meta.t_tot != panel.n_dates() {
        return Err(Error::Data(format!(
            "{}: sidecar says {}x{}, file holds {}x{}",
            path.display(),
            meta.n,
            meta.t_tot,
            panel.n_tickers(),
            panel.n_dates()
        )));
    }
    if !panel.dropped.is_empty() {
        return Err(Error::Data(format!(
            "{}: panel file has gaps or invalid prices",
            path.display()
        )));
    }
    panel.dropped = meta.dropped;
    panel.sector_of = meta.sectors;
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> PricePanel {
        parse_prices(text, Path::new("mem.csv"), ContinuityPolicy::default()).unwrap()
    }

    #[test]
    fn three_consecutive_blanks_drop_the_ticker() {
        let csv = "date,A,B,C\n\
                   2020-01-01,1,10,100\n\
                   2020-01-02,2,,101\n\
                   2020-01-03,3,,102\n\
                   2020-01-04,4,,103\n\
                   2020-01-05,5,14,104\n";
        let p = parse(csv);
        assert_eq!(p.tickers, vec!["A", "C"]);
        assert_eq!(p.dropped.len(), 1);
        assert_eq!(p.dropped[0].ticker, "B");
    }

    #[test]
    fn single_blank_is_forward_filled() {
        let csv = "date,A\n2020-01-01,100\n2020-01-02,\n2020-01-03,102\n";
        let p = parse(csv);
        assert_eq!(p.prices.row(0).iter().copied().collect::<Vec<_>>(), vec![100.0, 100.0, 102.0]);
    }

    #[test]
    fn nan_literal_counts_as_missing() {
        let csv = "date,A\n2020-01-01,100\n2020-01-02,NaN\n2020-01-03,NaN\n2020-01-04,101\n";
        let p = parse(csv);
        assert_eq!(p.prices[(0, 2)], 100.0);
    }

    #[test]
    fn dense_csv_is_unchanged() {
        let csv = "date,A,B\n2020-01-01,1.5,2.25\n2020-01-02,1.75,2.5\n";
        let p = parse(csv);
        assert_eq!(p.tickers.len(), 2);
        assert_eq!(p.prices, DMatrix::from_row_slice(2, 2, &[1.5, 1.75, 2.25, 2.5]));
        assert!(p.dropped.is_empty());
    }

    #[test]
    fn leading_gap_drops_ticker() {
        let csv = "date,A,B\n2020-01-01,,2\n2020-01-02,1,2\n";
        let p = parse(csv);
        assert_eq!(p.tickers, vec!["B"]);
        assert_eq!(p.dropped[0].reason, "missing first entry");
    }

    #[test]
    fn non_positive_price_rejects_ticker() {
        let csv = "date,A,B\n2020-01-01,1,0\n2020-01-02,1,2\n";
        let p = parse(csv);
        assert_eq!(p.tickers, vec!["A"]);
        assert!(p.dropped[0].reason.contains("non-positive"));
    }

    #[test]
    fn non_monotone_dates_rejected() {
        let csv = "date,A\n2020-01-02,1\n2020-01-01,2\n";
        let err = parse_prices(csv, Path::new("x.csv"), ContinuityPolicy::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn garbage_cell_is_a_parse_error() {
        let csv = "date,A\n2020-01-01,abc\n2020-01-02,2\n";
        assert!(parse_prices(csv, Path::new("x.csv"), ContinuityPolicy::default()).is_err());
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let err = load_prices("/nonexistent/prices.csv", ContinuityPolicy::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn returns_of_exponential_prices() {
        let e = std::f64::consts::E;
        let csv = format!("date,A,B\n2020-01-01,1,5\n2020-01-02,{},5\n2020-01-03,{},5\n", e, e * e);
        let r = log_returns(&parse(&csv));
        assert_eq!(r.len(), 2);
        assert!((r.returns[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((r.returns[(0, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(r.returns[(1, 0)], 0.0);
        assert_eq!(r.returns[(1, 1)], 0.0);
        assert_eq!(r.dates, vec!["2020-01-01", "2020-01-02"]);
    }

    #[test]
    fn sector_map_must_cover_tickers() {
        let p = parse("date,A,B\n2020-01-01,1,2\n2020-01-02,1,2\n");
        let mut m = SectorMap::new();
        m.insert("A".into(), "Tech".into());
        assert!(p.clone().with_sectors(m.clone()).is_err());
        m.insert("B".into(), "Energy".into());
        m.insert("Z".into(), "Other".into());
        let p = p.with_sectors(m).unwrap();
        assert_eq!(p.sector_of.unwrap().len(), 2);
    }
}
