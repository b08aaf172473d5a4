//! Readers and writers for every file the pipeline consumes or emits.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::conformal::{CoverageReport, IntervalRecord};
use crate::error::{Error, Result};
use crate::forecast::{EmbeddingMode, ForecastBundle, GcsvrModel, RecursionMode};
use crate::gcn::GcnModel;
use crate::graph::{Station, StationNetwork};
use crate::metrics::MetricReport;
use crate::numeric::Matrix;
use crate::panel::PanelSeries;
use crate::schedule::ScheduleWindow;
use crate::svr::SvrModel;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(path: &Path, reader: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header {}, got {}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Reads typed rows after checking the header.
fn read_rows<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<(u64, T)>> {
    let mut reader = csv_reader(path)?;
    check_header(path, &mut reader, header)?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let v = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        out.push((line, v));
    }
    Ok(out)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct StationRow {
    station_id: String,
    name: String,
    lat: f64,
    lon: f64,
}

pub const STATIONS_HEADER: &[&str] = &["station_id", "name", "lat", "lon"];

pub fn read_stations(path: &Path) -> Result<Vec<Station>> {
    let rows: Vec<(u64, StationRow)> = read_rows(path, STATIONS_HEADER)?;
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if r.station_id.is_empty() {
            return Err(parse_err(path, line, "empty station_id"));
        }
        if let Some(first) = seen.insert(r.station_id.clone(), line) {
            return Err(parse_err(
                path,
                line,
                format!("station {} already defined on line {first}", r.station_id),
            ));
        }
        out.push(Station::new(r.station_id, r.name, r.lat, r.lon).map_err(|e| parse_err(path, line, e.to_string()))?);
    }
    if out.is_empty() {
        return Err(parse_err(path, 1, "no stations"));
    }
    Ok(out)
}

pub fn write_stations(path: &Path, stations: &[Station]) -> Result<()> {
    let rows: Vec<StationRow> = stations
        .iter()
        .map(|s| StationRow {
            station_id: s.id.clone(),
            name: s.name.clone(),
            lat: s.lat,
            lon: s.lon,
        })
        .collect();
    write_rows(path, &rows)
}

pub const PANEL_HEADER: &[&str] = &["date", "station_id", "value"];

fn parse_date(path: &Path, line: u64, text: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|_| parse_err(path, line, format!("expected YYYY-MM-DD date, got {text:?}")))
}

/// Reads a long-format panel. Dates must be non-decreasing; absent rows and
/// empty or `NA` values become missing cells. With `station_ids`, columns
/// follow that order and other ids are rejected; otherwise they follow
/// first appearance.
pub fn read_panel(path: &Path, station_ids: Option<&[String]>) -> Result<PanelSeries> {
    let mut reader = csv_reader(path)?;
    check_header(path, &mut reader, PANEL_HEADER)?;
    let mut ids: Vec<String> = station_ids.map(<[String]>::to_vec).unwrap_or_default();
    let mut col: HashMap<String, usize> = ids.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
    let mut cells: Vec<(i64, usize, Option<f64>)> = Vec::new();
    let mut seen: HashMap<(i64, usize), u64> = HashMap::new();
    let mut first: Option<NaiveDate> = None;
    let mut last: Option<NaiveDate> = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, got {}", rec.len())));
        }
        let date = parse_date(path, line, &rec[0])?;
        if last.is_some_and(|l| date < l) {
            return Err(parse_err(path, line, format!("date {date} is earlier than the previous row")));
        }
        last = Some(date);
        let start = *first.get_or_insert(date);
        let id = &rec[1];
        let c = match col.get(id) {
            Some(&c) => c,
            None if station_ids.is_some() => {
                return Err(parse_err(path, line, format!("unknown station id {id:?}")));
            }
            None => {
                ids.push(id.to_string());
                col.insert(id.to_string(), ids.len() - 1);
                ids.len() - 1
            }
        };
        let value = match &rec[2] {
            "" | "NA" | "NaN" | "nan" => None,
            v => {
                let x: f64 = v
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("cannot parse value {v:?}")))?;
                if !x.is_finite() {
                    return Err(parse_err(path, line, format!("non-finite value {v:?}")));
                }
                Some(x)
            }
        };
        let day = (date - start).num_days();
        if let Some(prev) = seen.insert((day, c), line) {
            return Err(parse_err(
                path,
                line,
                format!("duplicate row for {date} / {id} (first on line {prev})"),
            ));
        }
        cells.push((day, c, value));
    }
    let (Some(start), Some(end)) = (first, last) else {
        return Err(parse_err(path, 1, "panel has no rows"));
    };
    let days = (end - start).num_days() as usize + 1;
    let n = ids.len();
    let mut values = Matrix::zeros(days, n);
    let mut missing = vec![true; days * n];
    for (day, c, v) in cells {
        if let Some(x) = v {
            values[(day as usize, c)] = x;
            missing[day as usize * n + c] = false;
        }
    }
    PanelSeries::new(start, ids, values, missing)
}

pub fn write_panel(path: &Path, panel: &PanelSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(PANEL_HEADER).map_err(|e| csv_err(path, e))?;
    for t in 0..panel.len() {
        let date = panel.date(t).to_string();
        for (i, id) in panel.station_ids().iter().enumerate() {
            if panel.is_missing(t, i) {
                continue;
            }
            w.write_record([date.as_str(), id.as_str(), &panel.value(t, i).to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// `graph.json`: enough to rebuild the network exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub station_ids: Vec<String>,
    pub sigma_tilde_sq: f64,
    pub eps_sparsity: f64,
    pub zeta_max: f64,
    /// Row-major `N×N`.
    pub adjacency: Vec<f64>,
    pub config: serde_json::Value,
}

impl GraphFile {
    pub fn from_network(network: &StationNetwork, config: serde_json::Value) -> Self {
        Self {
            station_ids: network.station_ids(),
            sigma_tilde_sq: network.sigma_tilde_sq(),
            eps_sparsity: network.eps_sparsity(),
            zeta_max: network.zeta_max(),
            adjacency: network.adjacency().as_slice().to_vec(),
            config,
        }
    }

    /// Rebuilds the network over `stations`, which must carry the same ids
    /// in the same order.
    pub fn to_network(&self, stations: Vec<Station>) -> Result<StationNetwork> {
        let ids: Vec<&str> = stations.iter().map(|s| s.id.as_str()).collect();
        if ids != self.station_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::invalid("graph station ids do not match the station list"));
        }
        let n = stations.len();
        let a = Matrix::from_vec(n, n, self.adjacency.clone())?;
        StationNetwork::from_adjacency(stations, a, self.sigma_tilde_sq, self.eps_sparsity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationForecast {
    pub station_id: String,
    pub values: Vec<f64>,
    pub sigma: Option<f64>,
}

/// `forecasts.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastsFile {
    pub model: String,
    pub origin: NaiveDate,
    pub horizon: usize,
    pub stations: Vec<StationForecast>,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl ForecastsFile {
    pub fn from_bundle(model: &str, bundle: &ForecastBundle, seed: u64, config: serde_json::Value) -> Self {
        let stations = bundle
            .station_ids
            .iter()
            .enumerate()
            .map(|(i, id)| StationForecast {
                station_id: id.clone(),
                values: bundle.values.column(i),
                sigma: bundle.sigma.as_ref().map(|s| s[i]),
            })
            .collect();
        Self {
            model: model.to_string(),
            origin: bundle.origin,
            horizon: bundle.horizon(),
            stations,
            seed,
            config,
        }
    }

    pub fn to_bundle(&self) -> Result<ForecastBundle> {
        let n = self.stations.len();
        let mut values = Matrix::zeros(self.horizon, n);
        for (i, s) in self.stations.iter().enumerate() {
            if s.values.len() != self.horizon {
                return Err(Error::invalid(format!(
                    "station {} has {} values for horizon {}",
                    s.station_id,
                    s.values.len(),
                    self.horizon
                )));
            }
            for (h, v) in s.values.iter().enumerate() {
                values[(h, i)] = *v;
            }
        }
        let sigma = self.stations.iter().map(|s| s.sigma).collect::<Option<Vec<f64>>>();
        Ok(ForecastBundle {
            origin: self.origin,
            station_ids: self.stations.iter().map(|s| s.station_id.clone()).collect(),
            values,
            sigma,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub index: usize,
    #[serde(flatten)]
    pub window: ScheduleWindow,
    pub models: Vec<ModelMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub mean: crate::metrics::MetricValues,
}

/// `metrics.json`: per window, per model, per station, per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub horizon: usize,
    pub pinball_rho: f64,
    pub windows: Vec<WindowMetrics>,
    /// Averages over windows and stations.
    pub summary: Vec<ModelSummary>,
    pub seed: u64,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McbRow {
    pub model: String,
    pub mean_rank: f64,
    pub cd: f64,
    #[serde(with = "bool01")]
    pub flagged: bool,
}

pub const MCB_HEADER: &[&str] = &["model", "mean_rank", "cd", "flagged"];

pub fn write_mcb(path: &Path, rows: &[McbRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_mcb(path: &Path) -> Result<Vec<McbRow>> {
    Ok(read_rows(path, MCB_HEADER)?.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub task: String,
    pub model: String,
    pub score: f64,
}

pub const SCORES_HEADER: &[&str] = &["task", "model", "score"];

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    Ok(read_rows(path, SCORES_HEADER)?.into_iter().map(|(_, r)| r).collect())
}

/// Pivots long-format scores to a `tasks×models` matrix. Tasks and models
/// keep their order of first appearance; every pair must occur exactly once.
pub fn score_matrix(path: &Path, rows: &[ScoreRow]) -> Result<(Vec<String>, Vec<String>, Matrix)> {
    let mut tasks: Vec<String> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    let mut task_idx = HashMap::new();
    let mut model_idx = HashMap::new();
    for r in rows {
        if !task_idx.contains_key(&r.task) {
            task_idx.insert(r.task.clone(), tasks.len());
            tasks.push(r.task.clone());
        }
        if !model_idx.contains_key(&r.model) {
            model_idx.insert(r.model.clone(), models.len());
            models.push(r.model.clone());
        }
    }
    let mut m = Matrix::filled(tasks.len(), models.len(), f64::NAN);
    for (k, r) in rows.iter().enumerate() {
        let line = k as u64 + 2;
        if !r.score.is_finite() {
            return Err(parse_err(path, line, "non-finite score"));
        }
        let cell = &mut m[(task_idx[&r.task], model_idx[&r.model])];
        if !cell.is_nan() {
            return Err(parse_err(path, line, format!("duplicate score for task {} / model {}", r.task, r.model)));
        }
        *cell = r.score;
    }
    for (t, task) in tasks.iter().enumerate() {
        for (j, model) in models.iter().enumerate() {
            if m[(t, j)].is_nan() {
                return Err(Error::invalid(format!("{}: no score for task {task} / model {model}", path.display())));
            }
        }
    }
    Ok((tasks, models, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IntervalRow {
    date: NaiveDate,
    station_id: String,
    forecast: f64,
    lower: f64,
    upper: f64,
    #[serde(with = "bool01")]
    covered: bool,
    actual: f64,
}

pub const INTERVALS_HEADER: &[&str] = &["date", "station_id", "forecast", "lower", "upper", "covered", "actual"];

pub fn write_intervals(path: &Path, records: &[IntervalRecord]) -> Result<()> {
    let rows: Vec<IntervalRow> = records
        .iter()
        .map(|r| IntervalRow {
            date: r.date,
            station_id: r.station_id.clone(),
            forecast: r.forecast,
            lower: r.lower,
            upper: r.upper,
            covered: r.covered,
            actual: r.actual,
        })
        .collect();
    write_rows(path, &rows)
}

pub fn read_intervals(path: &Path) -> Result<Vec<IntervalRecord>> {
    Ok(read_rows::<IntervalRow>(path, INTERVALS_HEADER)?
        .into_iter()
        .map(|(_, r)| IntervalRecord {
            date: r.date,
            station_id: r.station_id,
            forecast: r.forecast,
            lower: r.lower,
            upper: r.upper,
            actual: r.actual,
            covered: r.covered,
        })
        .collect())
}

/// `coverage.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageFile {
    #[serde(flatten)]
    pub report: CoverageReport,
    pub seed: u64,
    pub run_config: serde_json::Value,
}

/// One box-plot row of `plotdata_<metric>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub model: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

pub const PLOTDATA_HEADER: &[&str] = &["model", "n", "min", "q1", "median", "q3", "max", "mean"];

impl BoxRow {
    pub fn from_values(model: &str, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid(format!("no values for model {model}")));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |r: f64| crate::metrics::empirical_quantile(&s, r);
        Ok(Self {
            model: model.to_string(),
            n: s.len(),
            min: s[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: s[s.len() - 1],
            mean: s.iter().sum::<f64>() / s.len() as f64,
        })
    }
}

pub fn write_plotdata(path: &Path, rows: &[BoxRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_plotdata(path: &Path) -> Result<Vec<BoxRow>> {
    Ok(read_rows(path, PLOTDATA_HEADER)?.into_iter().map(|(_, r)| r).collect())
}

/// `manifest.json` in each output directory: the files written and the
/// configuration behind them, so CSV outputs carry their provenance too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
}

mod bool01 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match String::deserialize(d)?.as_str() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(serde::de::Error::custom(format!("expected 0 or 1, got {other:?}"))),
        }
    }
}

const MODEL_FORMAT: &str = "gcsvr-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    version: u32,
    stations: Vec<Station>,
    graph: GraphFile,
    embedding: EmbeddingMode,
    recursion: RecursionMode,
    residual_sigma: Vec<f64>,
    gcn_file: String,
    svr_files: Vec<String>,
    seed: u64,
    config: serde_json::Value,
}

fn svr_file_name(k: usize, id: &str) -> String {
    if !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !id.starts_with('.') {
        format!("svr_{id}.model")
    } else {
        format!("svr_{k:04}.model")
    }
}

/// Writes `model.json`, `gcn.model` and one `svr_<id>.model` per station.
pub fn save_model(dir: &Path, model: &GcsvrModel, seed: u64, config: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let ids = model.station_ids();
    let gcn_file = "gcn.model".to_string();
    model.gcn.save(&dir.join(&gcn_file))?;
    let mut svr_files = Vec::with_capacity(ids.len());
    for (k, (id, svr)) in ids.iter().zip(&model.svrs).enumerate() {
        let name = svr_file_name(k, id);
        svr.save(&dir.join(&name))?;
        svr_files.push(name);
    }
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        stations: model.network.stations().to_vec(),
        graph: GraphFile::from_network(&model.network, serde_json::Value::Null),
        embedding: model.embedding,
        recursion: model.recursion,
        residual_sigma: model.residual_sigma.clone(),
        gcn_file,
        svr_files,
        seed,
        config,
    };
    write_json(&dir.join("model.json"), &manifest)
}

/// Loads a model directory; returns the model and its training seed.
pub fn load_model(dir: &Path) -> Result<(GcsvrModel, u64)> {
    let path = dir.join("model.json");
    let m: ModelManifest = read_json(&path)?;
    if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
        return Err(Error::invalid(format!(
            "{}: unsupported model format {} v{}",
            path.display(),
            m.format,
            m.version
        )));
    }
    let network = m.graph.to_network(m.stations)?;
    let gcn = GcnModel::load(&dir.join(&m.gcn_file))?;
    let svrs = m
        .svr_files
        .iter()
        .map(|f| SvrModel::load(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    if svrs.len() != network.len() || m.residual_sigma.len() != network.len() {
        return Err(Error::invalid(format!("{}: station count mismatch", path.display())));
    }
    Ok((
        GcsvrModel {
            gcn,
            svrs,
            network,
            embedding: m.embedding,
            recursion: m.recursion,
            residual_sigma: m.residual_sigma,
        },
        m.seed,
    ))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    Ok(dir.to_path_buf())
}
