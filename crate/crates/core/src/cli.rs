//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::build_network;
use crate::io::{self, ForecastsFile, GraphFile, Manifest, McbRow};
use crate::mcb::mcb_test;
use crate::metrics::METRIC_NAMES;
use crate::panel::PanelSeries;
use crate::pipeline::{self, with_jobs};
use crate::synth::{generate_synthetic, SyntheticSpec, Topology};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable holding the log filter (`error`, `warn`, `info`, ...).
pub const LOG_ENV: &str = "STGCSVR_LOG";

#[derive(Debug, Parser)]
#[command(name = "gcsvr", version, about = "Graph-convolutional SVR forecasting for station networks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run seed; every random draw derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for station and window tasks.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Station list (defaults to <out>/stations.csv).
    #[arg(long, global = true)]
    stations: Option<PathBuf>,
    /// Observation panel (defaults to <out>/panel.csv).
    #[arg(long, global = true)]
    panel: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic graph-coupled autoregressive dataset.
    Synth(SynthArgs),
    /// Build the station graph and write graph.json.
    BuildGraph,
    /// Train the encoder and per-station regressors.
    Train,
    /// Forecast the days after the panel with a trained model.
    Forecast(ForecastArgs),
    /// Score a forecast file, or run the rolling backtest when none is given.
    Evaluate(EvaluateArgs),
    /// Multiple comparisons with the best over a long-format score file.
    Mcb(McbArgs),
    /// One-step conformal prediction intervals over the end of the panel.
    Conformal(ConformalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    nodes: usize,
    #[arg(long, default_value_t = 1000)]
    days: usize,
    /// ring, grid or two-cluster.
    #[arg(long, default_value = "ring")]
    topology: String,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    ar: f64,
    #[arg(long, default_value_t = 0.4)]
    coupling: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// First date, YYYY-MM-DD.
    #[arg(long, default_value = "2020-01-01")]
    start: String,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    /// Model directory (defaults to <out>/model).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Days to forecast (defaults to the configured horizon).
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// forecasts.json to score against the panel.
    #[arg(long)]
    forecasts: Option<PathBuf>,
    /// Backtest window length: 30, 60 or 90.
    #[arg(long)]
    horizon: Option<u32>,
    /// Metric written to scores.csv.
    #[arg(long, default_value = "mae")]
    score_metric: String,
}

#[derive(Debug, Args)]
struct McbArgs {
    #[arg(long)]
    scores: PathBuf,
    /// 0.05 or 0.01.
    #[arg(long, default_value_t = 0.05)]
    theta: f64,
}

#[derive(Debug, Args)]
struct ConformalArgs {
    /// Number of final panel days that receive intervals.
    #[arg(long, default_value_t = 365)]
    test_days: usize,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    upsilon: Option<usize>,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.apply(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(p) = &common.stations {
        cfg.stations = Some(p.clone());
    }
    if let Some(p) = &common.panel {
        cfg.panel = Some(p.clone());
    }
    for p in [&cfg.stations, &cfg.panel].into_iter().flatten() {
        if !p.exists() {
            return Err(Error::Io {
                path: p.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
            });
        }
    }
    Ok(cfg)
}

fn write_manifest(cfg: &RunConfig, command: &str, files: &[String]) -> Result<()> {
    io::write_json(
        &cfg.out.join(format!("{command}.manifest.json")),
        &Manifest {
            command: command.to_string(),
            files: files.to_vec(),
            seed: cfg.seed,
            config: cfg.echo(),
        },
    )
}

#[derive(Serialize)]
struct TruthFile<'a> {
    #[serde(flatten)]
    truth: &'a crate::synth::SyntheticTruth,
    config: serde_json::Value,
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Evaluate(a) => {
            if let Some(h) = a.horizon {
                cfg.horizon = h;
            }
        }
        Command::Conformal(a) => {
            if let Some(r) = a.rho {
                cfg.conformal.rho = r;
            }
            if let Some(u) = a.upsilon {
                cfg.conformal.upsilon = u;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    io::ensure_dir(&cfg.out)?;
    log::info!("seed {} with {} job(s), output in {}", cfg.seed, cfg.jobs, cfg.out.display());
    let jobs = cfg.jobs;
    with_jobs(jobs, move || dispatch(&cli.command, &cfg))?
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, cfg),
        Command::BuildGraph => {
            let path = cfg.stations.clone().unwrap_or_else(|| cfg.out.join("stations.csv"));
            let network = build_network(io::read_stations(&path)?, &cfg.graph)?;
            for w in network.warnings() {
                log::warn!("{w}");
            }
            io::write_json(&cfg.out.join("graph.json"), &GraphFile::from_network(&network, cfg.echo()))?;
            write_manifest(cfg, "build-graph", &["graph.json".into()])
        }
        Command::Train => {
            let inputs = pipeline::load_inputs(cfg)?;
            let model = pipeline::train_model(&inputs, cfg)?;
            io::save_model(&cfg.out.join("model"), &model, cfg.seed, cfg.echo())?;
            write_manifest(cfg, "train", &["model/model.json".into()])
        }
        Command::Forecast(a) => forecast(a, cfg),
        Command::Evaluate(a) => evaluate(a, cfg),
        Command::Mcb(a) => mcb(a, cfg),
        Command::Conformal(a) => {
            let inputs = pipeline::load_inputs(cfg)?;
            let (records, report) = pipeline::conformal_backtest(&inputs, cfg, a.test_days)?;
            log::info!("pooled coverage {:.4} over {} points", report.pooled, report.points);
            io::write_intervals(&cfg.out.join("intervals.csv"), &records)?;
            io::write_json(
                &cfg.out.join("coverage.json"),
                &io::CoverageFile {
                    report,
                    seed: cfg.seed,
                    run_config: cfg.echo(),
                },
            )?;
            write_manifest(cfg, "conformal", &["intervals.csv".into(), "coverage.json".into()])
        }
    }
}

fn synth(a: &SynthArgs, cfg: &RunConfig) -> Result<()> {
    let spec = SyntheticSpec {
        nodes: a.nodes,
        topology: a.topology.parse::<Topology>()?,
        ar: a.ar,
        coupling: a.coupling,
        noise_sigma: a.noise,
        days: a.days,
        seed: cfg.seed,
        start: chrono::NaiveDate::parse_from_str(&a.start, "%Y-%m-%d")
            .map_err(|_| Error::invalid(format!("--start expects YYYY-MM-DD, got {:?}", a.start)))?,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec)?;
    io::write_stations(&cfg.out.join("stations.csv"), &data.stations)?;
    io::write_panel(&cfg.out.join("panel.csv"), &data.panel)?;
    io::write_json(
        &cfg.out.join("truth.json"),
        &TruthFile {
            truth: &data.truth,
            config: cfg.echo(),
        },
    )?;
    write_manifest(
        cfg,
        "synth",
        &["stations.csv".into(), "panel.csv".into(), "truth.json".into()],
    )
}

fn forecast(a: &ForecastArgs, cfg: &RunConfig) -> Result<()> {
    let dir = a.model.clone().unwrap_or_else(|| cfg.out.join("model"));
    let (model, seed) = io::load_model(&dir)?;
    let panel_path = cfg.panel.clone().unwrap_or_else(|| cfg.out.join("panel.csv"));
    let ids = model.station_ids();
    let panel: PanelSeries = io::read_panel(&panel_path, Some(&ids))?.impute()?;
    let q = a.horizon.unwrap_or(cfg.horizon as usize);
    let bundle = model.forecast(&panel, q)?;
    io::write_json(
        &cfg.out.join("forecasts.json"),
        &ForecastsFile::from_bundle(pipeline::MODEL_GCSVR, &bundle, seed, cfg.echo()),
    )?;
    write_manifest(cfg, "forecast", &["forecasts.json".into()])
}

fn write_metric_outputs(out: &Path, metrics: &io::MetricsFile, score_metric: &str) -> Result<Vec<String>> {
    io::write_json(&out.join("metrics.json"), metrics)?;
    io::write_scores(&out.join("scores.csv"), &pipeline::score_rows(metrics, score_metric)?)?;
    let mut files = vec!["metrics.json".to_string(), "scores.csv".to_string()];
    for m in METRIC_NAMES {
        let name = format!("plotdata_{m}.csv");
        io::write_plotdata(&out.join(&name), &pipeline::plot_rows(metrics, m)?)?;
        files.push(name);
    }
    Ok(files)
}

fn evaluate(a: &EvaluateArgs, cfg: &RunConfig) -> Result<()> {
    let metrics = match &a.forecasts {
        Some(path) => {
            let f: ForecastsFile = io::read_json(path)?;
            let panel_path = cfg.panel.clone().unwrap_or_else(|| cfg.out.join("panel.csv"));
            let ids: Vec<String> = f.stations.iter().map(|s| s.station_id.clone()).collect();
            let panel = io::read_panel(&panel_path, Some(&ids))?;
            pipeline::evaluate_forecasts(&f, &panel, cfg)?
        }
        None => {
            let inputs = pipeline::load_inputs(cfg)?;
            pipeline::backtest(&inputs, cfg)?.metrics
        }
    };
    let files = write_metric_outputs(&cfg.out, &metrics, &a.score_metric)?;
    write_manifest(cfg, "evaluate", &files)
}

fn mcb(a: &McbArgs, cfg: &RunConfig) -> Result<()> {
    let rows = io::read_scores(&a.scores)?;
    let (_, models, matrix) = io::score_matrix(&a.scores, &rows)?;
    let result = mcb_test(&matrix, &models, a.theta)?;
    let csv: Vec<McbRow> = (0..models.len())
        .map(|j| McbRow {
            model: models[j].clone(),
            mean_rank: result.mean_ranks[j],
            cd: result.critical_distance,
            flagged: result.significantly_worse[j],
        })
        .collect();
    io::write_mcb(&cfg.out.join("mcb.csv"), &csv)?;
    io::write_json(
        &cfg.out.join("mcb.json"),
        &serde_json::json!({ "result": result, "seed": cfg.seed, "config": cfg.echo() }),
    )?;
    write_manifest(cfg, "mcb", &["mcb.csv".into(), "mcb.json".into()])
}
