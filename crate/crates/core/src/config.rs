//! Flat `key = value` pipeline configuration.
//!
//! One setting per line, `#` starts a comment. Relative paths are resolved
//! against the directory holding the config file. Recognised keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `prices` | price CSV | required |
//! | `sectors` | `ticker,sector` CSV | none |
//! | `events` | event catalog CSV | none |
//! | `out_dir` | artifact directory | `out` |
//! | `max_gap` | longest run of missing prices | 2 |
//! | `T` / `epoch_length` | epoch length in days | 20 |
//! | `shift` | epoch shift in days | 1 |
//! | `epsilon_grid` | `start:step:end` or comma list | `0:0.1:1` |
//! | `k_range` | `lo..hi` (inclusive) or comma list | `2..10` |
//! | `k_min` | smallest `k` eligible for selection | 4 |
//! | `inits` | k-means initialisations | 1000 |
//! | `seed` | top-level seed | 7 |
//! | `mds_dim` | MDS dimension for clustering | 3 |
//! | `kmeans_init` | `plus_plus` or `uniform` | `plus_plus` |
//! | `fit_k`, `fit_epsilon` | fix the stock-level model instead of selecting | selected |
//! | `sector_k`, `sector_epsilon` | sector-level model | `fit_k`, 0.2 |
//! | `threshold` | variance-ratio threshold | 0.4 |
//! | `window_width` | event window width in price days | 125 |
//! | `window_epsilon` | power map inside event windows | 0 |
//! | `rmt_n`, `rmt_t`, `rmt_ensemble`, `rmt_bins`, `rmt_epsilon` | Wishart check | 200, 800, 50, 100, 0 |
//! | `workers` | worker threads (never changes outputs) | 1 |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::states::InitMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub prices: PathBuf,
    pub sectors: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub max_gap: usize,
    pub epoch_length: usize,
    pub shift: usize,
    pub epsilon_grid: Vec<f64>,
    pub k_range: Vec<usize>,
    pub k_min: usize,
    pub inits: usize,
    pub seed: u64,
    pub mds_dim: usize,
    pub kmeans_init: InitMethod,
    pub fit_k: Option<usize>,
    pub fit_epsilon: Option<f64>,
    pub sector_k: Option<usize>,
    pub sector_epsilon: f64,
    pub threshold: f64,
    pub window_width: usize,
    pub window_epsilon: f64,
    pub rmt_n: usize,
    pub rmt_t: usize,
    pub rmt_ensemble: usize,
    pub rmt_bins: usize,
    pub rmt_epsilon: f64,
    pub workers: usize,
}

impl PipelineConfig {
    pub fn new(prices: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            prices: prices.into(),
            sectors: None,
            events: None,
            out_dir: out_dir.into(),
            max_gap: 2,
            epoch_length: 20,
            shift: 1,
            epsilon_grid: parse_epsilon_grid("0:0.1:1").expect("valid default"),
            k_range: (2..=10).collect(),
            k_min: 4,
            inits: 1000,
            seed: 7,
            mds_dim: 3,
            kmeans_init: InitMethod::PlusPlus,
            fit_k: None,
            fit_epsilon: None,
            sector_k: None,
            sector_epsilon: 0.2,
            threshold: 0.4,
            window_width: 125,
            window_epsilon: 0.0,
            rmt_n: 200,
            rmt_t: 800,
            rmt_ensemble: 50,
            rmt_bins: 100,
            rmt_epsilon: 0.0,
            workers: 1,
        }
    }

    /// Parse a config file; relative paths resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let pairs = parse_pairs(&text).map_err(|(line, message)| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })?;
        Self::from_pairs(&pairs, base)
    }

    /// Build from key/value pairs (later pairs win).
    pub fn from_pairs(pairs: &[(String, String)], base: &Path) -> Result<Self> {
        let map: BTreeMap<&str, &str> = pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let prices = map.get("prices").ok_or_else(|| invalid!("config is missing `prices`"))?;
        let mut cfg = PipelineConfig::new(base.join(prices), base.join("out"));
        for (k, v) in pairs {
            cfg.set(k, v, base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| invalid!("`{key}`: cannot parse {value:?} as {what}");
        let int = || value.parse::<usize>().map_err(|_| bad("an integer"));
        let real = || value.parse::<f64>().map_err(|_| bad("a number"));
        match key {
            "prices" => self.prices = base.join(value),
            "sectors" => self.sectors = Some(base.join(value)),
            "events" => self.events = Some(base.join(value)),
            "out_dir" => self.out_dir = base.join(value),
            "max_gap" => self.max_gap = int()?,
            "T" | "epoch_length" => self.epoch_length = int()?,
            "shift" => self.shift = int()?,
            "epsilon_grid" => self.epsilon_grid = parse_epsilon_grid(value)?,
            "k_range" => self.k_range = parse_k_range(value)?,
            "k_min" => self.k_min = int()?,
            "inits" => self.inits = int()?,
            "seed" => self.seed = value.parse().map_err(|_| bad("an unsigned 64-bit integer"))?,
            "mds_dim" => self.mds_dim = int()?,
            "kmeans_init" => {
                self.kmeans_init = match value {
                    "plus_plus" => InitMethod::PlusPlus,
                    "uniform" => InitMethod::Uniform,
                    _ => return Err(bad("`plus_plus` or `uniform`")),
                }
            }
            "fit_k" => self.fit_k = Some(int()?),
            "fit_epsilon" => self.fit_epsilon = Some(real()?),
            "sector_k" => self.sector_k = Some(int()?),
            "sector_epsilon" => self.sector_epsilon = real()?,
            "threshold" => self.threshold = real()?,
            "window_width" => self.window_width = int()?,
            "window_epsilon" => self.window_epsilon = real()?,
            "rmt_n" => self.rmt_n = int()?,
            "rmt_t" => self.rmt_t = int()?,
            "rmt_ensemble" => self.rmt_ensemble = int()?,
            "rmt_bins" => self.rmt_bins = int()?,
            "rmt_epsilon" => self.rmt_epsilon = real()?,
            "workers" => self.workers = int()?,
            other => return Err(invalid!("unknown config key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epoch_length < 2 || self.shift < 1 {
            return Err(invalid!("epoch length must be >= 2 and shift >= 1"));
        }
        if self.inits < 2 {
            return Err(invalid!("inits must be at least 2"));
        }
        if self.mds_dim < 1 {
            return Err(invalid!("mds_dim must be at least 1"));
        }
        if self.k_range.is_empty() || self.k_range.contains(&0) {
            return Err(invalid!("k_range must be non-empty and positive"));
        }
        for e in self.epsilon_grid.iter().chain(self.fit_epsilon.iter()) {
            if !(*e >= 0.0) {
                return Err(invalid!("epsilon values must be >= 0, got {e}"));
            }
        }
        if !(self.threshold > 0.0) {
            return Err(invalid!("threshold must be positive"));
        }
        if self.workers < 1 {
            return Err(invalid!("workers must be at least 1"));
        }
        Ok(())
    }

    /// Check that every referenced input file exists.
    pub fn check_inputs(&self) -> Result<()> {
        for p in std::iter::once(&self.prices).chain(self.sectors.iter()).chain(self.events.iter()) {
            if !p.is_file() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found")));
            }
        }
        Ok(())
    }
}

fn parse_pairs(text: &str) -> std::result::Result<Vec<(String, String)>, (usize, String)> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| (i + 1, format!("expected `key = value`, found {line:?}")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// `lo..hi` (inclusive) or a comma-separated list.
pub fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    let bad = || invalid!("cannot parse k range {s:?}");
    let ks: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(bad());
    }
    Ok(ks)
}

/// `start:step:end` (inclusive, rounded to 12 decimals) or a comma list.
pub fn parse_epsilon_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    let bad = || invalid!("cannot parse epsilon grid {s:?}");
    let num = |p: &str| p.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [start, step, end] => {
            let (start, step, end) = (num(start)?, num(step)?, num(end)?);
            if !(step > 0.0) || end < start {
                return Err(bad());
            }
            let n = ((end - start) / step + 1e-9).floor() as usize;
            (0..=n)
                .map(|i| ((start + step * i as f64) * 1e12).round() / 1e12)
                .collect()
        }
        [_] => s.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if grid.iter().any(|e| !(*e >= 0.0)) {
        return Err(bad());
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_grid_forms() {
        assert_eq!(
            parse_epsilon_grid("0:0.1:1").unwrap(),
            vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
        );
        assert_eq!(parse_epsilon_grid("0,0.6").unwrap(), vec![0.0, 0.6]);
        assert!(parse_epsilon_grid("1:0:2").is_err());
        assert!(parse_epsilon_grid("-1").is_err());
    }

    #[test]
    fn k_range_forms() {
        assert_eq!(parse_k_range("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_k_range("4,8").unwrap(), vec![4, 8]);
        assert!(parse_k_range("5..2").is_err());
        assert!(parse_k_range("0..2").is_err());
    }

    #[test]
    fn config_text_parses_with_relative_paths() {
        let text = "# demo\nprices = p.csv\nT = 10 # short\nk_range = 2..4\nfit_k = 3\n";
        let pairs = parse_pairs(text).unwrap();
        let cfg = PipelineConfig::from_pairs(&pairs, Path::new("/data")).unwrap();
        assert_eq!(cfg.prices, PathBuf::from("/data/p.csv"));
        assert_eq!(cfg.epoch_length, 10);
        assert_eq!(cfg.k_range, vec![2, 3, 4]);
        assert_eq!(cfg.fit_k, Some(3));
        assert_eq!(cfg.out_dir, PathBuf::from("/data/out"));
    }

    #[test]
    fn unknown_keys_and_missing_prices_rejected() {
        let pairs = vec![("prices".to_string(), "p.csv".to_string()), ("bogus".to_string(), "1".to_string())];
        assert!(PipelineConfig::from_pairs(&pairs, Path::new(".")).is_err());
        assert!(PipelineConfig::from_pairs(&[], Path::new(".")).is_err());
        assert!(parse_pairs("no equals sign").is_err());
    }
}
