//! `marketstates` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
//! When `MARKETSTATES_OUT_DIR` is set, relative output paths and the
//! pipeline output directory are placed under it.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use marketstates::config::{parse_epsilon_grid, parse_k_range, PipelineConfig};
use marketstates::corrmat::{epoch_correlations, read_series, write_series, EpochCorrelationSeries, EpochSpec};
use marketstates::error::{Error, ErrorClass, Result};
use marketstates::formats::{sidecar_path, write_json};
use marketstates::geometry::{classical_mds, dimension_fidelity, similarity_matrix};
use marketstates::ingest::{load_prices, load_sector_map, log_returns, read_panel, write_panel, ContinuityPolicy};
use marketstates::pipeline::{emit_plot_data, run_pipeline, write_embedding, StageAction};
use marketstates::rmt::{rmt_validate, write_density, WishartSpec};
use marketstates::sector::{displacement_between, optimize_sectors, sector_fit_series, DiagonalConvention};
use marketstates::states::{
    fit_states, optimize_series, read_model, select_optimum, write_model, write_surface, InitMethod, SearchSettings,
};
use marketstates::trajectory::{
    analyze_trajectory, classify_catalog, cut_window, read_catalog, write_catalog_report, write_report, WindowAnchor,
    WindowConfig,
};

const OUT_DIR_ENV: &str = "MARKETSTATES_OUT_DIR";

#[derive(Parser)]
#[command(name = "marketstates", version, about = "Market states from rolling correlation matrices")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a price CSV, drop discontinuous tickers and write a panel file.
    Ingest {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        sectors: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        max_gap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rolling epoch correlation matrices.
    Corr {
        #[arg(long)]
        panel: PathBuf,
        #[command(flatten)]
        epochs: EpochArgs,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare power-mapped Wishart spectra with the Marchenko-Pastur law.
    RmtValidate {
        #[arg(long = "N", default_value_t = 200)]
        n: usize,
        #[arg(long = "T", default_value_t = 800)]
        t: usize,
        #[arg(long, default_value_t = 50)]
        ensemble: usize,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed the epochs of a series file with classical MDS.
    Mds {
        #[arg(long)]
        series: PathBuf,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stock-level market states.
    States {
        #[command(subcommand)]
        action: StatesCommand,
    },
    /// Sector-level market states.
    Sectors {
        #[command(subcommand)]
        action: SectorsCommand,
    },
    /// Classify one event window, or a catalog of them.
    Trajectory(TrajectoryArgs),
    /// Run the whole pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set inits=50`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Rerun stages even when their hashes are up to date.
        #[arg(long)]
        force: bool,
    },
    /// Write the bundled synthetic fixture and run the pipeline on it.
    Demo {
        #[arg(long, default_value = "marketstates-demo")]
        dir: PathBuf,
        #[arg(long)]
        force: bool,
        /// Only write the fixture files.
        #[arg(long)]
        no_run: bool,
    },
}

#[derive(Args, Clone, Copy)]
struct EpochArgs {
    /// Epoch length in trading days.
    #[arg(long = "T", default_value_t = 20)]
    t: usize,
    #[arg(long, default_value_t = 1)]
    shift: usize,
}

/// Either a panel file (correlations computed on the fly) or a series file.
#[derive(Args)]
struct SeriesInput {
    #[arg(long, conflicts_with = "series", required_unless_present = "series")]
    panel: Option<PathBuf>,
    #[arg(long)]
    series: Option<PathBuf>,
    #[command(flatten)]
    epochs: EpochArgs,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 1000)]
    inits: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// MDS dimension used for clustering.
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// k-means seeding.
    #[arg(long, value_enum, default_value_t = Init::PlusPlus)]
    init: Init,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    PlusPlus,
    Uniform,
}

impl SearchArgs {
    fn settings(&self) -> SearchSettings {
        SearchSettings {
            n_inits: self.inits,
            seed: self.seed,
            dim: self.dim,
            init: match self.init {
                Init::PlusPlus => InitMethod::PlusPlus,
                Init::Uniform => InitMethod::Uniform,
            },
        }
    }
}

#[derive(Subcommand)]
enum StatesCommand {
    /// σ of d_intra over the (k, ε) grid.
    Optimize {
        #[command(flatten)]
        input: SeriesInput,
        #[arg(long, default_value = "2..10")]
        k: String,
        #[arg(long, default_value = "0:0.1:1")]
        epsilon: String,
        #[arg(long, default_value_t = 4)]
        k_min: usize,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one (k, ε) model.
    Fit {
        #[command(flatten)]
        input: SeriesInput,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        epsilon: f64,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write coords.csv, transitions.csv and state averages here.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Diagonal {
    ExcludeSelf,
    IncludeSelf,
}

impl From<Diagonal> for DiagonalConvention {
    fn from(d: Diagonal) -> Self {
        match d {
            Diagonal::ExcludeSelf => DiagonalConvention::ExcludeSelf,
            Diagonal::IncludeSelf => DiagonalConvention::IncludeSelf,
        }
    }
}

#[derive(Subcommand)]
enum SectorsCommand {
    /// Fit states on sector-averaged correlation matrices.
    Fit {
        #[command(flatten)]
        input: SeriesInput,
        /// Sector map; defaults to the one stored with the panel.
        #[arg(long)]
        sectors: Option<PathBuf>,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = Diagonal::ExcludeSelf)]
        diagonal: Diagonal,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// σ of d_intra over the (k, ε) grid for sector-averaged matrices.
    Optimize {
        #[command(flatten)]
        input: SeriesInput,
        #[arg(long)]
        sectors: Option<PathBuf>,
        #[arg(long, default_value = "2..10")]
        k: String,
        #[arg(long, default_value = "0:0.1:1")]
        epsilon: String,
        #[arg(long, value_enum, default_value_t = Diagonal::ExcludeSelf)]
        diagonal: Diagonal,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of sector-state minus stock-state per epoch.
    Displace {
        #[arg(long)]
        stock_model: PathBuf,
        #[arg(long)]
        sector_model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct TrajectoryArgs {
    #[command(subcommand)]
    catalog: Option<TrajectoryCommand>,
    #[command(flatten)]
    window: WindowArgs,
    /// Centre date of the window.
    #[arg(long, conflicts_with_all = ["start", "end"])]
    center: Option<String>,
    #[arg(long, requires = "end")]
    start: Option<String>,
    #[arg(long, requires = "start")]
    end: Option<String>,
    #[arg(long, default_value = "event")]
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WindowArgs {
    #[arg(long)]
    panel: Option<PathBuf>,
    #[command(flatten)]
    epochs: EpochArgs,
    /// Window width in price days.
    #[arg(long, default_value_t = 125)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, default_value_t = 0.4)]
    threshold: f64,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
}

#[derive(Subcommand)]
enum TrajectoryCommand {
    /// Classify every event of an events CSV.
    Catalog {
        #[arg(long)]
        events: PathBuf,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn load_series(input: &SeriesInput) -> Result<EpochCorrelationSeries> {
    match (&input.panel, &input.series) {
        (_, Some(series)) => read_series(series),
        (Some(panel), None) => {
            let spec = EpochSpec::new(input.epochs.t, input.epochs.shift)?;
            epoch_correlations(&log_returns(&read_panel(panel)?), spec)
        }
        (None, None) => Err(usage("one of --panel or --series is required")),
    }
}

fn sector_map_for(input: &SeriesInput, sectors: &Option<PathBuf>) -> Result<marketstates::ingest::SectorMap> {
    if let Some(path) = sectors {
        return load_sector_map(path);
    }
    match &input.panel {
        Some(panel) => read_panel(panel)?
            .sector_of
            .ok_or_else(|| usage("the panel has no sector map; pass --sectors")),
        None => Err(usage("--sectors is required with --series")),
    }
}

fn window_config(w: &WindowArgs) -> Result<WindowConfig> {
    Ok(WindowConfig {
        spec: EpochSpec::new(w.epochs.t, w.epochs.shift)?,
        epsilon: w.epsilon,
        dim: w.dim,
        threshold: w.threshold,
    })
}

fn print_actions(actions: &[(String, StageAction)]) {
    for (stage, action) in actions {
        let word = match action {
            StageAction::Ran => "ran",
            StageAction::Skipped => "up to date",
            StageAction::NotConfigured => "not configured",
            StageAction::Failed => "FAILED",
        };
        println!("{stage:<11} {word}");
    }
}

fn run_config(mut config: PipelineConfig, workers: usize, force: bool) -> Result<()> {
    config.workers = workers;
    let outcome = run_pipeline(&config, force)?;
    print_actions(&outcome.actions);
    println!("manifest: {}", config.out_dir.join(marketstates::pipeline::MANIFEST).display());
    match outcome.failure {
        Some((_, e)) => Err(e),
        None => Ok(()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    match cli.command {
        Command::Ingest {
            prices,
            sectors,
            max_gap,
            out,
        } => {
            let mut panel = load_prices(
                &prices,
                ContinuityPolicy {
                    max_consecutive_missing: max_gap,
                },
            )?;
            if let Some(s) = sectors {
                panel = panel.with_sectors(load_sector_map(s)?)?;
            }
            for d in &panel.dropped {
                info!("dropped {}: {}", d.ticker, d.reason);
            }
            let out = out_path(&out);
            write_panel(&panel, &out)?;
            println!(
                "{} tickers x {} days ({} dropped) -> {}",
                panel.n_tickers(),
                panel.n_dates(),
                panel.dropped.len(),
                out.display()
            );
        }
        Command::Corr {
            panel,
            epochs,
            epsilon,
            out,
        } => {
            let spec = EpochSpec::new(epochs.t, epochs.shift)?;
            let mut series = epoch_correlations(&log_returns(&read_panel(panel)?), spec)?;
            if epsilon != 0.0 {
                series = series.power_mapped(epsilon)?;
            }
            let out = out_path(&out);
            write_series(&series, &out)?;
            println!("{} epochs -> {}", series.len(), out.display());
        }
        Command::RmtValidate {
            n,
            t,
            ensemble,
            epsilon,
            bins,
            seed,
            out,
        } => {
            let spec = WishartSpec::new(n, t, ensemble, seed);
            let (density, report) = rmt_validate(&spec, epsilon, bins)?;
            let out = out_path(&out);
            write_density(&density, &report, &out)?;
            println!(
                "Q = {}, support [{:.4}, {:.4}], L1 = {:.4} -> {}",
                report.q,
                report.lambda_min,
                report.lambda_max,
                report.l1_distance,
                out.display()
            );
        }
        Command::Mds { series, dim, out } => {
            let series = read_series(series)?;
            let zeta = similarity_matrix(&series)?;
            let embedding = classical_mds(&zeta, dim)?;
            let dims: Vec<usize> = (1..=4.min(zeta.size() - 1)).collect();
            let fidelity = dimension_fidelity(&zeta, &dims).ok();
            let epochs: Vec<usize> = series.matrices.iter().map(|m| m.epoch).collect();
            let out = out_path(&out);
            write_embedding(&embedding, &epochs, &series.dates(), fidelity.as_deref(), &out)?;
            println!(
                "{} points in {} dimensions -> {} (diagnostics {})",
                epochs.len(),
                dim,
                out.display(),
                sidecar_path(&out).display()
            );
        }
        Command::States { action } => match action {
            StatesCommand::Optimize {
                input,
                k,
                epsilon,
                k_min,
                search,
                out,
            } => {
                let series = load_series(&input)?;
                let surface = optimize_series(&series, &parse_k_range(&k)?, &parse_epsilon_grid(&epsilon)?, search.settings())?;
                let out = out_path(&out);
                write_surface(&surface, &out)?;
                match select_optimum(&surface, k_min) {
                    Ok((k, e)) => println!("optimum k = {k}, epsilon = {e} -> {}", out.display()),
                    Err(err) => println!("no optimum with k >= {k_min} ({err}) -> {}", out.display()),
                }
            }
            StatesCommand::Fit {
                input,
                k,
                epsilon,
                search,
                out,
                plot_dir,
            } => {
                let series = load_series(&input)?;
                let fit = fit_states(&series, k, epsilon, search.settings())?;
                let out = out_path(&out);
                write_model(&fit.model, &out)?;
                if let Some(dir) = plot_dir {
                    let epochs: Vec<usize> = series.matrices.iter().map(|m| m.epoch).collect();
                    emit_plot_data(&fit.model, &fit.embedding, &epochs, out_path(&dir))?;
                }
                println!("occupancy {:?} -> {}", fit.model.occupancy(), out.display());
            }
        },
        Command::Sectors { action } => match action {
            SectorsCommand::Fit {
                input,
                sectors,
                k,
                epsilon,
                diagonal,
                search,
                out,
            } => {
                let map = sector_map_for(&input, &sectors)?;
                let series = load_series(&input)?;
                let fit = sector_fit_series(&series, &map, k, epsilon, search.settings(), diagonal.into())?;
                let out = out_path(&out);
                write_model(&fit.model, &out)?;
                println!("occupancy {:?} -> {}", fit.model.occupancy(), out.display());
            }
            SectorsCommand::Optimize {
                input,
                sectors,
                k,
                epsilon,
                diagonal,
                search,
                out,
            } => {
                let map = sector_map_for(&input, &sectors)?;
                let series = load_series(&input)?;
                let surface = optimize_sectors(
                    &series,
                    &map,
                    &parse_k_range(&k)?,
                    &parse_epsilon_grid(&epsilon)?,
                    search.settings(),
                    diagonal.into(),
                )?;
                let out = out_path(&out);
                write_surface(&surface, &out)?;
                println!("{} grid points -> {}", surface.grid.len(), out.display());
            }
            SectorsCommand::Displace {
                stock_model,
                sector_model,
                out,
            } => {
                let report = displacement_between(&read_model(stock_model)?, &read_model(sector_model)?)?;
                let out = out_path(&out);
                write_json(&out, &report)?;
                println!("max |displacement| = {} -> {}", report.max_abs_displacement, out.display());
            }
        },
        Command::Trajectory(args) => match args.catalog {
            Some(TrajectoryCommand::Catalog { events, window, out }) => {
                let panel_path = window.panel.clone().ok_or_else(|| usage("--panel is required"))?;
                let panel = read_panel(panel_path)?;
                let config = window_config(&window)?;
                let catalog = read_catalog(events, window.width)?;
                let report = classify_catalog(&panel, &catalog, &config);
                let out = out_path(&out);
                write_catalog_report(&report, config.threshold, &out)?;
                for row in report.rows.iter().map(|r| r.row()) {
                    println!("{:<24} {}", row.name, serde_json::to_string(&row.classification)?.trim_matches('"'));
                }
                for f in &report.failures {
                    println!("{:<24} error: {}", f.name, f.error);
                }
                println!("-> {}", out.display());
            }
            None => {
                let panel_path = args.window.panel.clone().ok_or_else(|| usage("--panel is required"))?;
                let out = args.out.ok_or_else(|| usage("--out is required"))?;
                let anchor = match (args.center, args.start, args.end) {
                    (Some(date), None, None) => WindowAnchor::Center {
                        date,
                        width: args.window.width,
                    },
                    (None, Some(start), Some(end)) => WindowAnchor::Range { start, end },
                    _ => return Err(usage("give either --center or both --start and --end")),
                };
                let panel = read_panel(panel_path)?;
                let config = window_config(&args.window)?;
                let window = cut_window(&panel, &args.name, &anchor, &config)?;
                let report = analyze_trajectory(&window, &config)?;
                let out = out_path(&out);
                write_report(&report, &out)?;
                let row = report.row();
                println!(
                    "{} {}..{} var_ratio {} -> {}",
                    row.name,
                    row.start,
                    row.end,
                    row.var_ratio.map_or("n/a".to_string(), |r| format!("{r:.4}")),
                    out.display()
                );
            }
        },
        Command::Run {
            config,
            overrides,
            force,
        } => {
            let mut cfg = PipelineConfig::from_file(&config)?;
            let cwd = PathBuf::from(".");
            for o in &overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
                cfg.set(k.trim(), v, &cwd)?;
            }
            if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
                cfg.out_dir = PathBuf::from(dir);
            }
            cfg.validate()?;
            run_config(cfg, workers, force)?;
        }
        Command::Demo { dir, force, no_run } => {
            let dir = out_path(&dir);
            let mut cfg = marketstates::demo::write_demo(&dir)?;
            cfg.out_dir = dir.clone();
            println!("demo fixture written to {}", dir.display());
            if !no_run {
                run_config(cfg, workers, force)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
