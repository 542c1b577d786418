//! Bundled synthetic fixture: a small regime-switching market with sectors
//! and two stress episodes, used by the `demo` command and the tests.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::formats;
use crate::seed;

pub const DEMO_SEED: u64 = 20_200_220;
pub const DEMO_DAYS: usize = 520;
pub const SECTORS: [&str; 4] = ["Energy", "Finance", "Health", "Tech"];
pub const STOCKS_PER_SECTOR: usize = 5;
/// Price-day indices at the centre of the stress episodes.
pub const CRASH_DAYS: [usize; 2] = [200, 400];
pub const CALM_DAY: usize = 300;

/// Days since 1970-01-01 to a civil `(year, month, day)`.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (yoe + era * 400 + (m <= 2) as i64, m, d)
}

/// Weekday trading calendar starting Monday 2015-01-05.
pub fn business_days(count: usize) -> Vec<String> {
    // 1970-01-01 was a Thursday; 2015-01-05 is day 16440.
    let mut day = 16_440i64;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let weekday = (day + 3).rem_euclid(7); // 0 = Monday
        if weekday < 5 {
            let (y, m, d) = civil_from_days(day);
            out.push(format!("{y:04}-{m:02}-{d:02}"));
        }
        day += 1;
    }
    out
}

/// Market-factor loading and volatility for each day.
fn regime_path(days: usize, rng: &mut seed::Rng) -> Vec<(f64, f64)> {
    let levels = [(0.25, 0.008), (0.5, 0.011), (0.7, 0.015)];
    let mut state = 0usize;
    let mut path = Vec::with_capacity(days);
    for t in 0..days {
        if rng.random::<f64>() < 0.03 {
            let step: i64 = if rng.random::<bool>() { 1 } else { -1 };
            state = (state as i64 + step).clamp(0, 2) as usize;
        }
        let crash = CRASH_DAYS.iter().any(|&c| t + 6 >= c && t <= c + 8);
        // The calm event window sits in one regime so its trajectory is noise only.
        let calm = t.abs_diff(CALM_DAY) <= 70;
        path.push(match (crash, calm) {
            (true, _) => (0.92, 0.035),
            (false, true) => levels[0],
            (false, false) => levels[state],
        });
    }
    path
}

/// Daily prices (rows = days) for `20` stocks plus one ticker with a
/// three-day gap that the continuity filter must drop. A few isolated blank
/// cells early on exercise forward filling.
pub fn demo_prices_csv() -> String {
    let mut rng = seed::rng(DEMO_SEED);
    let n = SECTORS.len() * STOCKS_PER_SECTOR;
    let regimes = regime_path(DEMO_DAYS, &mut rng);
    let sector_weight = 0.35f64;
    let mut log_price = vec![100f64.ln(); n + 1];
    let dates = business_days(DEMO_DAYS);
    let mut rows = Vec::with_capacity(DEMO_DAYS);
    for (t, &(beta, vol)) in regimes.iter().enumerate() {
        if t > 0 {
            let market: f64 = StandardNormal.sample(&mut rng);
            let sector: Vec<f64> = (0..SECTORS.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let idio_weight = (1.0 - beta * beta - sector_weight * sector_weight).max(0.0).sqrt();
            for (i, lp) in log_price.iter_mut().enumerate() {
                let s = (i / STOCKS_PER_SECTOR).min(SECTORS.len() - 1);
                let e: f64 = StandardNormal.sample(&mut rng);
                *lp += vol * (beta * market + sector_weight * sector[s] + idio_weight * e);
            }
        }
        rows.push(log_price.iter().map(|lp| lp.exp()).collect::<Vec<f64>>());
    }
    let mut out = String::from("date");
    for s in 0..SECTORS.len() {
        for j in 0..STOCKS_PER_SECTOR {
            out.push_str(&format!(",{}{}", &SECTORS[s][..3].to_uppercase(), j + 1));
        }
    }
    out.push_str(",GAPPY\n");
    for (t, row) in rows.iter().enumerate() {
        out.push_str(&dates[t]);
        for (i, p) in row.iter().enumerate() {
            out.push(',');
            let single_blank = i < n && (1..120).contains(&t) && (t * 31 + i * 17) % 97 == 0;
            let gap = i == n && (150..153).contains(&t);
            if !(single_blank || gap) {
                out.push_str(&format!("{p:.4}"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn demo_sectors_csv() -> String {
    let mut out = String::from("ticker,sector\n");
    for s in SECTORS {
        for j in 0..STOCKS_PER_SECTOR {
            out.push_str(&format!("{}{},{}\n", &s[..3].to_uppercase(), j + 1, s));
        }
    }
    out.push_str("GAPPY,Tech\n");
    out
}

pub fn demo_events_csv() -> String {
    let dates = business_days(DEMO_DAYS);
    format!(
        "name,center_date\nstress-1,{}\ncalm,{}\nstress-2,{}\n",
        dates[CRASH_DAYS[0]], dates[CALM_DAY], dates[CRASH_DAYS[1]]
    )
}

pub const DEMO_CONFIG: &str = "\
# Synthetic 20-stock demo.
prices = prices.csv
sectors = sectors.csv
events = events.csv
out_dir = .
T = 20
shift = 1
epsilon_grid = 0:0.5:1
k_range = 2..6
k_min = 4
inits = 20
seed = 7
mds_dim = 3
sector_epsilon = 0.2
threshold = 0.4
window_width = 125
rmt_n = 200
rmt_t = 800
rmt_ensemble = 50
rmt_bins = 100
";

/// Write the fixture into `dir` and return its configuration.
pub fn write_demo(dir: impl AsRef<Path>) -> Result<PipelineConfig> {
    let dir = dir.as_ref();
    formats::write_file(dir.join("prices.csv"), demo_prices_csv().as_bytes())?;
    formats::write_file(dir.join("sectors.csv"), demo_sectors_csv().as_bytes())?;
    formats::write_file(dir.join("events.csv"), demo_events_csv().as_bytes())?;
    formats::write_file(dir.join("demo.conf"), DEMO_CONFIG.as_bytes())?;
    PipelineConfig::from_file(dir.join("demo.conf"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calendar_skips_weekends() {
        let d = business_days(7);
        assert_eq!(d[0], "2015-01-05");
        assert_eq!(d[4], "2015-01-09");
        assert_eq!(d[5], "2015-01-12");
        assert_eq!(business_days(300)[299], "2016-02-26");
    }

    #[test]
    fn fixture_is_deterministic() {
        assert_eq!(demo_prices_csv(), demo_prices_csv());
    }
}
