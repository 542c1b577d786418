//! End-to-end orchestration with a hash manifest.
//!
//! Stages run in dependency order and communicate only through files in the
//! output directory:
//!
//! 1. `ingest` → `panel.csv`
//! 2. `corr` → `series.csv`
//! 3. `geometry` → `embedding.csv`
//! 4. `states` → `surface.csv`, `model.json`, plot data
//! 5. `sectors` → `sector_model.json`, `displacement.json`
//! 6. `trajectory` → `trajectory_report.json`
//! 7. `rmt` → `rmt_density.csv`
//!
//! Every stage appends a record to `manifest.json` holding its parameters,
//! the hashes of its inputs and outputs, and a key derived from both. A stage
//! whose key and outputs match the previous manifest is skipped unless
//! forced. The first failing stage stops the run.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::corrmat::{epoch_correlations, read_series, write_series, EpochSpec};
use crate::error::{invalid, Error, ErrorClass, Result};
use crate::formats::{self, fmt_f64, sha256_file, sha256_hex, sidecar_path};
use crate::geometry::{classical_mds, dimension_fidelity, similarity_matrix, Embedding, MdsDiagnostics};
use crate::ingest::{load_prices, load_sector_map, log_returns, read_panel, write_panel, ContinuityPolicy};
use crate::rmt::{rmt_validate, write_density, WishartSpec};
use crate::sector::{displacement_between, sector_fit_series, DiagonalConvention};
use crate::states::{
    fit_states, optimize_series, read_model, select_optimum, write_model, write_surface, SearchSettings, StateModel,
};
use crate::trajectory::{classify_catalog, read_catalog, write_catalog_report, WindowConfig};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
    NotConfigured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub key: String,
    pub params: Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub complete: bool,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    fn empty() -> Self {
        Manifest {
            format: "marketstates-manifest/1".into(),
            complete: false,
            stages: Vec::new(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        formats::read_json(path)
    }

    /// Stages that completed and produced files.
    pub fn artifacts(&self) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(|s| s.status == StageStatus::Ok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageAction {
    Ran,
    Skipped,
    NotConfigured,
    Failed,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub actions: Vec<(String, StageAction)>,
    pub failure: Option<(String, Error)>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn error_class(&self) -> Option<ErrorClass> {
        self.failure.as_ref().map(|(_, e)| e.class())
    }
}

fn relative_name(path: &Path, out_dir: &Path) -> String {
    let rel = match (path.canonicalize(), out_dir.canonicalize()) {
        (Ok(p), Ok(o)) => p.strip_prefix(&o).map(Path::to_path_buf).ok(),
        _ => None,
    };
    rel.or_else(|| path.file_name().map(PathBuf::from))
        .unwrap_or_else(|| path.to_path_buf())
        .to_string_lossy()
        .replace('\\', "/")
}

fn hash_files(paths: &[PathBuf], out_dir: &Path) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                file: relative_name(p, out_dir),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn stage_key(name: &str, params: &Value, inputs: &[FileHash]) -> String {
    let payload = json!({ "stage": name, "params": params, "inputs": inputs });
    sha256_hex(payload.to_string().as_bytes())
}

fn up_to_date(previous: &StageRecord, key: &str, out_dir: &Path) -> bool {
    previous.status == StageStatus::Ok
        && previous.key == key
        && previous
            .outputs
            .iter()
            .all(|f| sha256_file(out_dir.join(&f.file)).is_ok_and(|h| h == f.sha256))
}

struct Runner<'a> {
    out_dir: &'a Path,
    force: bool,
    previous: Option<Manifest>,
    manifest: Manifest,
    actions: Vec<(String, StageAction)>,
}

impl Runner<'_> {
    fn save(&self) -> Result<()> {
        formats::write_json(self.out_dir.join(MANIFEST), &self.manifest)
    }

    fn not_configured(&mut self, name: &str, reason: &str) -> Result<()> {
        self.manifest.stages.push(StageRecord {
            stage: name.into(),
            status: StageStatus::NotConfigured,
            key: String::new(),
            params: json!({ "reason": reason }),
            inputs: vec![],
            outputs: vec![],
            error: None,
        });
        self.actions.push((name.into(), StageAction::NotConfigured));
        self.save()
    }

    /// Run one stage; `Err` means the pipeline must stop.
    fn stage<F>(&mut self, name: &str, params: Value, inputs: Vec<PathBuf>, body: F) -> std::result::Result<(), Error>
    where
        F: FnOnce() -> Result<Vec<PathBuf>>,
    {
        let attempt = (|| -> Result<(StageRecord, StageAction)> {
            let input_hashes = hash_files(&inputs, self.out_dir)?;
            let key = stage_key(name, &params, &input_hashes);
            if !self.force {
                if let Some(prev) = self
                    .previous
                    .as_ref()
                    .and_then(|m| m.stages.iter().find(|s| s.stage == name))
                {
                    if up_to_date(prev, &key, self.out_dir) {
                        return Ok((prev.clone(), StageAction::Skipped));
                    }
                }
            }
            let outputs = body()?;
            let record = StageRecord {
                stage: name.into(),
                status: StageStatus::Ok,
                key,
                params: params.clone(),
                inputs: input_hashes,
                outputs: hash_files(&outputs, self.out_dir)?,
                error: None,
            };
            Ok((record, StageAction::Ran))
        })();
        match attempt {
            Ok((record, action)) => {
                self.manifest.stages.push(record);
                self.actions.push((name.into(), action));
                self.save()
            }
            Err(e) => {
                self.manifest.stages.push(StageRecord {
                    stage: name.into(),
                    status: StageStatus::Failed,
                    key: String::new(),
                    params,
                    inputs: vec![],
                    outputs: vec![],
                    error: Some(e.to_string()),
                });
                self.actions.push((name.into(), StageAction::Failed));
                self.save()?;
                Err(e)
            }
        }
    }
}

/// Run every stage of `config` inside a pool of `config.workers` threads.
pub fn run_pipeline(config: &PipelineConfig, force: bool) -> Result<RunOutcome> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| invalid!("cannot start {} workers: {e}", config.workers))?;
    pool.install(|| run_stages(config, force))
}

fn run_stages(config: &PipelineConfig, force: bool) -> Result<RunOutcome> {
    let out = config.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let previous = Manifest::read(out.join(MANIFEST)).ok();
    let mut runner = Runner {
        out_dir: out,
        force,
        previous,
        manifest: Manifest::empty(),
        actions: Vec::new(),
    };
    let result = stages(config, &mut runner);
    let failure = match result {
        Ok(()) => {
            runner.manifest.complete = true;
            runner.save()?;
            None
        }
        Err(e) => {
            let stage = runner.actions.last().map(|(s, _)| s.clone()).unwrap_or_default();
            Some((stage, e))
        }
    };
    Ok(RunOutcome {
        manifest: runner.manifest,
        actions: runner.actions,
        failure,
    })
}

fn stages(config: &PipelineConfig, runner: &mut Runner<'_>) -> Result<()> {
    let out = config.out_dir.clone();
    let panel_path = out.join("panel.csv");
    let series_path = out.join("series.csv");
    let embedding_path = out.join("embedding.csv");
    let model_path = out.join("model.json");
    let spec = EpochSpec::new(config.epoch_length, config.shift)?;
    let settings = SearchSettings {
        n_inits: config.inits,
        seed: config.seed,
        dim: config.mds_dim,
        init: config.kmeans_init,
    };

    let mut ingest_inputs = vec![config.prices.clone()];
    ingest_inputs.extend(config.sectors.iter().cloned());
    runner.stage("ingest", json!({ "max_gap": config.max_gap }), ingest_inputs, || {
        config.check_inputs()?;
        let policy = ContinuityPolicy {
            max_consecutive_missing: config.max_gap,
        };
        let mut panel = load_prices(&config.prices, policy)?;
        if let Some(s) = &config.sectors {
            panel = panel.with_sectors(load_sector_map(s)?)?;
        }
        write_panel(&panel, &panel_path)?;
        Ok(vec![panel_path.clone(), sidecar_path(&panel_path)])
    })?;

    runner.stage(
        "corr",
        json!({ "T": spec.length, "shift": spec.shift }),
        vec![panel_path.clone(), sidecar_path(&panel_path)],
        || {
            let returns = log_returns(&read_panel(&panel_path)?);
            write_series(&epoch_correlations(&returns, spec)?, &series_path)?;
            Ok(vec![series_path.clone(), sidecar_path(&series_path)])
        },
    )?;

    let series_inputs = vec![series_path.clone(), sidecar_path(&series_path)];
    runner.stage("geometry", json!({ "dim": config.mds_dim }), series_inputs.clone(), || {
        let series = read_series(&series_path)?;
        let zeta = similarity_matrix(&series)?;
        let dim = config.mds_dim.min(zeta.size() - 1);
        let embedding = classical_mds(&zeta, dim)?;
        let dims: Vec<usize> = (1..=4.min(zeta.size() - 1)).collect();
        let fidelity = dimension_fidelity(&zeta, &dims).ok();
        let epochs: Vec<usize> = series.matrices.iter().map(|m| m.epoch).collect();
        write_embedding(&embedding, &epochs, &series.dates(), fidelity.as_deref(), &embedding_path)?;
        Ok(vec![embedding_path.clone(), sidecar_path(&embedding_path)])
    })?;

    let states_params = json!({
        "k_range": config.k_range,
        "epsilon_grid": config.epsilon_grid,
        "k_min": config.k_min,
        "inits": config.inits,
        "seed": config.seed,
        "dim": config.mds_dim,
        "init": config.kmeans_init,
        "fit_k": config.fit_k,
        "fit_epsilon": config.fit_epsilon,
    });
    runner.stage("states", states_params, series_inputs.clone(), || {
        let series = read_series(&series_path)?;
        let ks: Vec<usize> = config.k_range.iter().copied().filter(|&k| k <= series.len()).collect();
        let surface = optimize_series(&series, &ks, &config.epsilon_grid, settings)?;
        let surface_path = out.join("surface.csv");
        write_surface(&surface, &surface_path)?;
        let (k, epsilon) = match (config.fit_k, config.fit_epsilon) {
            (Some(k), Some(e)) => (k, e),
            (fk, fe) => {
                let (k, e) = select_optimum(&surface, config.k_min)?;
                (fk.unwrap_or(k), fe.unwrap_or(e))
            }
        };
        let fit = fit_states(&series, k, epsilon, settings)?;
        write_model(&fit.model, &model_path)?;
        let epochs: Vec<usize> = series.matrices.iter().map(|m| m.epoch).collect();
        let mut outputs = vec![surface_path, model_path.clone()];
        outputs.extend(emit_plot_data(&fit.model, &fit.embedding, &epochs, &out)?);
        Ok(outputs)
    })?;

    match &config.sectors {
        None => runner.not_configured("sectors", "no sector map")?,
        Some(_) => {
            let params = json!({
                "sector_k": config.sector_k,
                "sector_epsilon": config.sector_epsilon,
                "inits": config.inits,
                "seed": config.seed,
                "dim": config.mds_dim,
                "init": config.kmeans_init,
                "diagonal": DiagonalConvention::ExcludeSelf,
            });
            let mut inputs = series_inputs.clone();
            inputs.extend([sidecar_path(&panel_path), model_path.clone()]);
            runner.stage("sectors", params, inputs, || {
                let series = read_series(&series_path)?;
                let panel = read_panel(&panel_path)?;
                let stock = read_model(&model_path)?;
                let sector_of = panel
                    .sector_of
                    .ok_or_else(|| Error::Data("panel has no sector map".into()))?;
                let k = config.sector_k.unwrap_or(stock.k);
                let fit = sector_fit_series(
                    &series,
                    &sector_of,
                    k,
                    config.sector_epsilon,
                    settings,
                    DiagonalConvention::ExcludeSelf,
                )?;
                let sector_path = out.join("sector_model.json");
                write_model(&fit.model, &sector_path)?;
                let disp_path = out.join("displacement.json");
                formats::write_json(&disp_path, &displacement_between(&stock, &fit.model)?)?;
                Ok(vec![sector_path, disp_path])
            })?;
        }
    }

    match &config.events {
        None => runner.not_configured("trajectory", "no event catalog")?,
        Some(events) => {
            let params = json!({
                "T": spec.length,
                "shift": spec.shift,
                "width": config.window_width,
                "epsilon": config.window_epsilon,
                "threshold": config.threshold,
            });
            let inputs = vec![panel_path.clone(), sidecar_path(&panel_path), events.clone()];
            runner.stage("trajectory", params, inputs, || {
                let panel = read_panel(&panel_path)?;
                let catalog = read_catalog(events, config.window_width)?;
                let window = WindowConfig {
                    spec,
                    epsilon: config.window_epsilon,
                    dim: 3,
                    threshold: config.threshold,
                };
                let report = classify_catalog(&panel, &catalog, &window);
                let path = out.join("trajectory_report.json");
                write_catalog_report(&report, config.threshold, &path)?;
                Ok(vec![path])
            })?;
        }
    }

    let wishart = WishartSpec::new(config.rmt_n, config.rmt_t, config.rmt_ensemble, config.seed);
    let params = json!({
        "N": config.rmt_n,
        "T": config.rmt_t,
        "ensemble": config.rmt_ensemble,
        "bins": config.rmt_bins,
        "epsilon": config.rmt_epsilon,
        "seed": config.seed,
    });
    runner.stage("rmt", params, vec![], || {
        let (density, report) = rmt_validate(&wishart, config.rmt_epsilon, config.rmt_bins)?;
        let path = out.join("rmt_density.csv");
        write_density(&density, &report, &path)?;
        Ok(vec![path.clone(), sidecar_path(&path)])
    })?;
    Ok(())
}

/// Axis labels: `x`, `y`, `z`, then `d4`, `d5`, ...
pub fn axis_name(i: usize) -> String {
    match i {
        0 => "x".into(),
        1 => "y".into(),
        2 => "z".into(),
        _ => format!("d{}", i + 1),
    }
}

#[derive(Serialize)]
struct EmbeddingMeta<'a> {
    dim: usize,
    eigenvalues: &'a [f64],
    diagnostics: &'a MdsDiagnostics,
    fidelity: Option<Vec<(usize, f64)>>,
}

/// Coordinates CSV (`epoch_index,date,x,y,z`) with a diagnostics sidecar.
pub fn write_embedding(
    embedding: &Embedding,
    epochs: &[usize],
    dates: &[String],
    fidelity: Option<&[(usize, f64)]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch_index,date");
    for a in 0..embedding.dim {
        out.push(',');
        out.push_str(&axis_name(a));
    }
    out.push('\n');
    for (i, (epoch, date)) in epochs.iter().zip(dates).enumerate() {
        out.push_str(&format!("{epoch},{date}"));
        for a in 0..embedding.dim {
            out.push(',');
            out.push_str(&fmt_f64(embedding.coordinates[(i, a)]));
        }
        out.push('\n');
    }
    formats::write_file(path, out.as_bytes())?;
    let meta = EmbeddingMeta {
        dim: embedding.dim,
        eigenvalues: &embedding.eigenvalues,
        diagnostics: &embedding.diagnostics,
        fidelity: fidelity.map(<[_]>::to_vec),
    };
    formats::write_json(sidecar_path(path), &meta)
}

fn state_label(s: usize) -> String {
    format!("S{}", s + 1)
}

/// Plot-ready files: `coords.csv`, `transitions.csv`, `state_avg_corr_S*.csv`.
pub fn emit_plot_data(
    model: &StateModel,
    embedding: &Embedding,
    epochs: &[usize],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let fr = model.state_of.len();
    if embedding.coordinates.nrows() != fr || epochs.len() != fr || model.dates.len() != fr {
        return Err(Error::Data(format!(
            "inconsistent lengths: {} states, {} points, {} epochs, {} dates",
            fr,
            embedding.coordinates.nrows(),
            epochs.len(),
            model.dates.len()
        )));
    }
    let mut written = Vec::new();

    let mut coords = String::from("epoch,date");
    for a in 0..embedding.dim {
        coords.push(',');
        coords.push_str(&axis_name(a));
    }
    coords.push_str(",state\n");
    for i in 0..fr {
        coords.push_str(&format!("{},{}", epochs[i], model.dates[i]));
        for a in 0..embedding.dim {
            coords.push(',');
            coords.push_str(&fmt_f64(embedding.coordinates[(i, a)]));
        }
        coords.push_str(&format!(",{}\n", state_label(model.state_of[i])));
    }
    let path = out_dir.join("coords.csv");
    formats::write_file(&path, coords.as_bytes())?;
    written.push(path);

    let mut transitions = String::from("from,to,count\n");
    for a in 0..model.k {
        for b in 0..model.k {
            transitions.push_str(&format!(
                "{},{},{}\n",
                state_label(a),
                state_label(b),
                model.transition_counts[a][b]
            ));
        }
    }
    let path = out_dir.join("transitions.csv");
    formats::write_file(&path, transitions.as_bytes())?;
    written.push(path);

    for (s, m) in model.avg_corr.iter().enumerate() {
        let mut text = String::from("label");
        for l in &model.labels {
            text.push(',');
            text.push_str(l);
        }
        text.push('\n');
        for (i, l) in model.labels.iter().enumerate() {
            text.push_str(l);
            for j in 0..m.ncols() {
                text.push(',');
                text.push_str(&fmt_f64(m[(i, j)]));
            }
            text.push('\n');
        }
        let path = out_dir.join(format!("state_avg_corr_{}.csv", state_label(s)));
        formats::write_file(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Parsed `coords.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotCoords {
    pub epochs: Vec<usize>,
    pub dates: Vec<String>,
    pub coordinates: DMatrix<f64>,
    /// 0-based state index.
    pub states: Vec<usize>,
}

fn parse_state(s: &str) -> Option<usize> {
    s.strip_prefix('S')?.parse::<usize>().ok()?.checked_sub(1)
}

pub fn read_plot_coords(path: impl AsRef<Path>) -> Result<PlotCoords> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if header.len() < 4 || header[0] != "epoch" || header[1] != "date" || header.last() != Some(&"state") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected `epoch,date,<axes>,state`".into(),
        });
    }
    let dim = header.len() - 3;
    let (mut epochs, mut dates, mut values, mut states) = (vec![], vec![], vec![], vec![]);
    for (i, line) in lines.enumerate() {
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != dim + 3 {
            return Err(bad("wrong field count"));
        }
        epochs.push(f[0].parse().map_err(|_| bad("bad epoch"))?);
        dates.push(f[1].to_string());
        for v in &f[2..2 + dim] {
            values.push(formats::parse_f64(v, path, i + 2)?);
        }
        states.push(parse_state(f[dim + 2]).ok_or_else(|| bad("bad state label"))?);
    }
    let n = epochs.len();
    Ok(PlotCoords {
        epochs,
        dates,
        coordinates: DMatrix::from_row_slice(n, dim, &values),
        states,
    })
}

/// Parsed `transitions.csv` as a `k x k` count matrix.
pub fn read_plot_transitions(path: impl AsRef<Path>) -> Result<Vec<Vec<u64>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parsed = (f.len() == 3)
            .then(|| Some((parse_state(f[0])?, parse_state(f[1])?, f[2].parse::<u64>().ok()?)))
            .flatten();
        rows.push(parsed.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected `from,to,count`".into(),
        })?);
    }
    let k = (rows.len() as f64).sqrt().round() as usize;
    if k * k != rows.len() {
        return Err(Error::Data(format!("{}: {} rows is not a square count", path.display(), rows.len())));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (a, b, c) in rows {
        if a >= k || b >= k {
            return Err(Error::Data(format!("{}: state out of range", path.display())));
        }
        counts[a][b] = c;
    }
    Ok(counts)
}
