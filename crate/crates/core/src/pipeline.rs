//! End-to-end stages shared by the command line and the integration tests:
//! loading inputs, training, rolling backtests, single-window evaluation
//! and conformal runs.

use chrono::{Days, Months, NaiveDate};
use rayon::prelude::*;

use crate::config::{GcnRefit, RunConfig};
use crate::conformal::{run_conformal, CoverageReport, IntervalRecord};
use crate::error::{Error, Result};
use crate::forecast::{self, EmbeddingMode, ForecastBundle, ForecasterConfig, GcsvrModel};
use crate::gcn::{self, GcnModel};
use crate::graph::{build_network, Station, StationNetwork};
use crate::io::{self, BoxRow, MetricsFile, ModelMetrics, ModelSummary, ScoreRow, WindowMetrics};
use crate::metrics::{MetricReport, MetricValues, METRIC_NAMES};
use crate::numeric::SeededRng;
use crate::panel::PanelSeries;
use crate::schedule::{make_schedule, ScheduleWindow};

pub const MODEL_GCSVR: &str = "gcsvr";
pub const MODEL_SVR_LAG: &str = "svr-lag";
pub const MODEL_NAIVE: &str = "naive";
pub const BACKTEST_MODELS: [&str; 3] = [MODEL_GCSVR, MODEL_SVR_LAG, MODEL_NAIVE];

/// Runs `f` on a dedicated pool of `jobs` threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub network: StationNetwork,
    /// Imputed, with columns in network order.
    pub panel: PanelSeries,
}

pub fn build_inputs(stations: Vec<Station>, panel: &PanelSeries, cfg: &RunConfig) -> Result<Inputs> {
    let network = build_network(stations, &cfg.graph)?;
    for w in network.warnings() {
        log::warn!("{w}");
    }
    let panel = panel.reorder_stations(&network.station_ids())?;
    if panel.missing_count() > 0 {
        log::info!("imputing {} missing cells", panel.missing_count());
    }
    Ok(Inputs {
        panel: panel.impute()?,
        network,
    })
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let stations_path = cfg.stations.clone().unwrap_or_else(|| cfg.out.join("stations.csv"));
    let panel_path = cfg.panel.clone().unwrap_or_else(|| cfg.out.join("panel.csv"));
    let stations = io::read_stations(&stations_path)?;
    let ids: Vec<String> = stations.iter().map(|s| s.id.clone()).collect();
    let panel = io::read_panel(&panel_path, Some(&ids))?;
    build_inputs(stations, &panel, cfg)
}

/// Forecaster settings with the encoder seeded from `seed`.
pub fn forecaster_config(cfg: &RunConfig, seed: u64) -> ForecasterConfig {
    let mut f = cfg.forecaster.clone();
    f.gcn.seed = seed;
    f
}

pub fn window_seed(seed: u64, window: usize) -> u64 {
    SeededRng::derive_seed(seed, &[window as u64])
}

pub fn train_model(inputs: &Inputs, cfg: &RunConfig) -> Result<GcsvrModel> {
    forecast::fit(&inputs.panel, &inputs.network, &forecaster_config(cfg, cfg.seed))
}

/// The year ending on the panel's last day.
pub fn default_test_year_start(panel: &PanelSeries) -> Result<NaiveDate> {
    let end = panel.end().ok_or_else(|| Error::invalid("empty panel"))?;
    (end + Days::new(1))
        .checked_sub_months(Months::new(12))
        .ok_or_else(|| Error::invalid("date out of range"))
}

fn day_index(panel: &PanelSeries, date: NaiveDate, what: &str) -> Result<usize> {
    panel
        .index_of(date)
        .ok_or_else(|| Error::invalid(format!("{what} {date} is outside the panel ({} to {:?})", panel.start(), panel.end())))
}

fn model_forecast(
    name: &str,
    train: &PanelSeries,
    network: &StationNetwork,
    cfg: &RunConfig,
    seed: u64,
    encoder: Option<&GcnModel>,
    q: usize,
) -> Result<ForecastBundle> {
    match name {
        MODEL_NAIVE => forecast::naive_baseline(train, q),
        MODEL_GCSVR => {
            let fc = forecaster_config(cfg, seed);
            let model = match encoder {
                Some(g) => forecast::fit_with_encoder(train, network, g.clone(), &fc)?,
                None => forecast::fit(train, network, &fc)?,
            };
            model.forecast(train, q)
        }
        MODEL_SVR_LAG => {
            let mut fc = forecaster_config(cfg, seed);
            fc.embedding = EmbeddingMode::Zeroed;
            forecast::fit(train, network, &fc)?.forecast(train, q)
        }
        other => Err(Error::invalid(format!("unknown model {other}"))),
    }
}

/// Scores `bundle` against the panel days it covers; the days before its
/// origin are the training series behind MASE.
pub fn score_bundle(bundle: &ForecastBundle, panel: &PanelSeries, rho: f64) -> Result<MetricReport> {
    if bundle.station_ids != panel.station_ids() {
        return Err(Error::invalid("forecast stations do not match the panel"));
    }
    let from = day_index(panel, bundle.origin, "forecast origin")?;
    let q = bundle.horizon();
    if from + q > panel.len() {
        return Err(Error::invalid(format!(
            "panel ends before the last forecast day ({} days from {})",
            q, bundle.origin
        )));
    }
    if from < 2 {
        return Err(Error::invalid("need at least two observed days before the forecast origin"));
    }
    let sigma = bundle
        .sigma
        .as_ref()
        .ok_or_else(|| Error::invalid("forecasts carry no predictive spread"))?;
    let actual = panel.values().slice_rows(from, from + q);
    let train = panel.values().slice_rows(0, from);
    MetricReport::compute(panel.station_ids(), &actual, &bundle.values, &train, sigma, rho)
}

pub struct Backtest {
    pub metrics: MetricsFile,
    /// Per window, the forecasts of each model in [`BACKTEST_MODELS`] order.
    pub forecasts: Vec<Vec<(String, ForecastBundle)>>,
}

fn evaluate_window(
    inputs: &Inputs,
    cfg: &RunConfig,
    index: usize,
    window: ScheduleWindow,
    encoder: Option<&GcnModel>,
) -> Result<(WindowMetrics, Vec<(String, ForecastBundle)>)> {
    let train_to = day_index(&inputs.panel, window.train_end, "training end")? + 1;
    day_index(&inputs.panel, window.test_end, "test end")?;
    let train = inputs.panel.slice_days(0, train_to)?;
    let q = window.test_days();
    let seed = window_seed(cfg.seed, index);
    let mut models = Vec::new();
    let mut bundles = Vec::new();
    for name in BACKTEST_MODELS {
        log::info!("window {index}: fitting {name}");
        let bundle = model_forecast(name, &train, &inputs.network, cfg, seed, encoder, q)?;
        let report = score_bundle(&bundle, &inputs.panel, cfg.pinball_rho)?;
        models.push(ModelMetrics {
            model: name.to_string(),
            report,
        });
        bundles.push((name.to_string(), bundle));
    }
    Ok((WindowMetrics { index, window, models }, bundles))
}

fn summarize(windows: &[WindowMetrics]) -> Vec<ModelSummary> {
    let names: Vec<String> = windows
        .first()
        .map(|w| w.models.iter().map(|m| m.model.clone()).collect())
        .unwrap_or_default();
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let per_window: Vec<MetricValues> = windows.iter().map(|w| w.models[j].report.mean).collect();
            ModelSummary {
                model: name.clone(),
                mean: MetricValues::mean_of(&per_window),
            }
        })
        .collect()
}

/// Rolling-origin backtest over the test year, windows in parallel on the
/// current pool.
pub fn backtest(inputs: &Inputs, cfg: &RunConfig) -> Result<Backtest> {
    cfg.validate()?;
    let start = match cfg.test_year_start {
        Some(d) => d,
        None => default_test_year_start(&inputs.panel)?,
    };
    let schedule = make_schedule(start, cfg.horizon)?;
    day_index(&inputs.panel, schedule.year_end(), "test year end")?;
    let encoder = match cfg.gcn_refit {
        GcnRefit::PerWindow => None,
        GcnRefit::Once => {
            let first = &schedule.windows[0];
            let to = day_index(&inputs.panel, first.train_end, "training end")? + 1;
            let train = inputs.panel.slice_days(0, to)?;
            let fc = forecaster_config(cfg, window_seed(cfg.seed, 0));
            Some(gcn::train(train.values(), &inputs.network, &fc.gcn)?)
        }
    };
    let results: Vec<(WindowMetrics, Vec<(String, ForecastBundle)>)> = schedule
        .windows
        .par_iter()
        .enumerate()
        .map(|(k, w)| evaluate_window(inputs, cfg, k, *w, encoder.as_ref()))
        .collect::<Result<_>>()?;
    let (windows, forecasts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(Backtest {
        metrics: MetricsFile {
            horizon: cfg.horizon as usize,
            pinball_rho: cfg.pinball_rho,
            summary: summarize(&windows),
            windows,
            seed: cfg.seed,
            config: cfg.echo(),
        },
        forecasts,
    })
}

/// Metrics for one forecast file against observed values.
pub fn evaluate_forecasts(
    forecasts: &io::ForecastsFile,
    panel: &PanelSeries,
    cfg: &RunConfig,
) -> Result<MetricsFile> {
    let bundle = forecasts.to_bundle()?;
    let panel = panel.reorder_stations(&bundle.station_ids)?.impute()?;
    let report = score_bundle(&bundle, &panel, cfg.pinball_rho)?;
    let window = ScheduleWindow {
        train_end: bundle.origin - Days::new(1),
        test_start: bundle.origin,
        test_end: bundle.origin + Days::new(bundle.horizon() as u64 - 1),
    };
    let windows = vec![WindowMetrics {
        index: 0,
        window,
        models: vec![ModelMetrics {
            model: forecasts.model.clone(),
            report,
        }],
    }];
    Ok(MetricsFile {
        horizon: bundle.horizon(),
        pinball_rho: cfg.pinball_rho,
        summary: summarize(&windows),
        windows,
        seed: cfg.seed,
        config: cfg.echo(),
    })
}

/// Long-format scores, one task per (window, station).
pub fn score_rows(metrics: &MetricsFile, metric: &str) -> Result<Vec<ScoreRow>> {
    if !METRIC_NAMES.contains(&metric) {
        return Err(Error::invalid(format!("unknown metric {metric}")));
    }
    let mut rows = Vec::new();
    for w in &metrics.windows {
        for m in &w.models {
            for s in &m.report.stations {
                rows.push(ScoreRow {
                    task: format!("w{:02}/{}", w.index, s.station_id),
                    model: m.model.clone(),
                    score: s.values.get(metric).expect("known metric"),
                });
            }
        }
    }
    Ok(rows)
}

/// Box-plot quartiles per model of `metric` over every (window, station).
pub fn plot_rows(metrics: &MetricsFile, metric: &str) -> Result<Vec<BoxRow>> {
    let rows = score_rows(metrics, metric)?;
    let mut models: Vec<String> = Vec::new();
    for r in &rows {
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
    }
    models
        .iter()
        .map(|m| {
            let v: Vec<f64> = rows.iter().filter(|r| &r.model == m).map(|r| r.score).collect();
            BoxRow::from_values(m, &v)
        })
        .collect()
}

/// One-step conformal intervals over the last `test_days` days. The model
/// is trained on everything before the calibration block.
pub fn conformal_backtest(
    inputs: &Inputs,
    cfg: &RunConfig,
    test_days: usize,
) -> Result<(Vec<IntervalRecord>, CoverageReport)> {
    cfg.validate()?;
    let len = inputs.panel.len();
    if test_days == 0 || test_days >= len {
        return Err(Error::invalid(format!("test length {test_days} must be in 1..{len}")));
    }
    let test_start = len - test_days;
    let cal_start = test_start.checked_sub(cfg.conformal.upsilon).ok_or_else(|| {
        Error::InsufficientCalibration(format!(
            "{} calibration days do not fit before day {test_start}",
            cfg.conformal.upsilon
        ))
    })?;
    let train = inputs.panel.slice_days(0, cal_start)?;
    let model = forecast::fit(&train, &inputs.network, &forecaster_config(cfg, cfg.seed))?;
    run_conformal(&model, &inputs.panel, test_start, len, &cfg.conformal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SyntheticSpec};

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("epochs", "3"),
            ("hidden_dim", "8"),
            ("embed_dim", "4"),
            ("input_window", "7"),
            ("svr_c", "1"),
        ] {
            cfg.apply(k, v).unwrap();
        }
        cfg
    }

    fn inputs(days: usize) -> Inputs {
        let d = generate_synthetic(&SyntheticSpec {
            nodes: 4,
            days,
            seed: 2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        build_inputs(d.stations, &d.panel, &RunConfig::default()).unwrap()
    }

    #[test]
    fn backtest_covers_the_year() {
        let inp = inputs(500);
        let mut cfg = small_cfg();
        cfg.horizon = 90;
        let bt = backtest(&inp, &cfg).unwrap();
        assert_eq!(bt.metrics.windows.len(), 4);
        let total: usize = bt.metrics.windows.iter().map(|w| w.window.test_days()).sum();
        assert!(total == 365 || total == 366);
        assert_eq!(bt.metrics.windows[3].window.test_end, inp.panel.end().unwrap());
        for w in &bt.metrics.windows {
            let names: Vec<&str> = w.models.iter().map(|m| m.model.as_str()).collect();
            assert_eq!(names, BACKTEST_MODELS);
        }
        let scores = score_rows(&bt.metrics, "mae").unwrap();
        assert_eq!(scores.len(), 4 * 3 * 4);
        let plot = plot_rows(&bt.metrics, "crps").unwrap();
        assert_eq!(plot.len(), 3);
        assert!(plot.iter().all(|r| r.n == 16 && r.min <= r.q1 && r.q1 <= r.median && r.median <= r.q3 && r.q3 <= r.max));
    }

    #[test]
    fn backtest_independent_of_pool_size() {
        let inp = inputs(420);
        let mut cfg = small_cfg();
        cfg.horizon = 90;
        let a = with_jobs(1, || backtest(&inp, &cfg)).unwrap().unwrap();
        let b = with_jobs(4, || backtest(&inp, &cfg)).unwrap().unwrap();
        assert_eq!(
            serde_json::to_string(&a.metrics).unwrap(),
            serde_json::to_string(&b.metrics).unwrap()
        );
        cfg.gcn_refit = GcnRefit::Once;
        let c = backtest(&inp, &cfg).unwrap();
        assert_eq!(c.metrics.windows.len(), 4);
    }

    #[test]
    fn short_panel_is_rejected() {
        let inp = inputs(200);
        assert!(backtest(&inp, &small_cfg()).is_err());
    }

    #[test]
    fn single_window_evaluation() {
        let inp = inputs(200);
        let cfg = small_cfg();
        let train = inp.panel.slice_days(0, 170).unwrap();
        let model = forecast::fit(&train, &inp.network, &forecaster_config(&cfg, 1)).unwrap();
        let bundle = model.forecast(&train, 30).unwrap();
        let f = io::ForecastsFile::from_bundle("gcsvr", &bundle, 1, cfg.echo());
        let m = evaluate_forecasts(&f, &inp.panel, &cfg).unwrap();
        assert_eq!(m.windows.len(), 1);
        let direct = score_bundle(&bundle, &inp.panel, cfg.pinball_rho).unwrap();
        assert_eq!(m.windows[0].models[0].report, direct);
        let long = model.forecast(&train, 31).unwrap();
        let f = io::ForecastsFile::from_bundle("gcsvr", &long, 1, cfg.echo());
        assert!(evaluate_forecasts(&f, &inp.panel, &cfg).is_err());
    }

    #[test]
    fn conformal_run_shapes() {
        let inp = inputs(300);
        let mut cfg = small_cfg();
        cfg.conformal.upsilon = 30;
        let (records, report) = conformal_backtest(&inp, &cfg, 50).unwrap();
        assert_eq!(records.len(), 50 * 4);
        assert_eq!(report.points, 200);
        assert!(report.pooled > 0.5);
        assert!(conformal_backtest(&inp, &cfg, 299).is_err());
    }
}
