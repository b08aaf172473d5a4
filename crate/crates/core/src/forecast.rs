//! Spatial encoder plus per-station regressors: training-set assembly,
//! fitting and recursive multi-step forecasting.

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{self, GcnConfig, GcnModel};
use crate::graph::StationNetwork;
use crate::numeric::Matrix;
use crate::panel::PanelSeries;
use crate::svr::{train_svr, SvrConfig, SvrInput, SvrModel};

/// Floor for the residual spread of the gaussian predictive law.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    /// Embeddings from the trained encoder.
    Gcn,
    /// All-zero embeddings: a lag-only regressor with the same feature layout.
    Zeroed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecursionMode {
    /// Recompute embeddings from the working window at every step.
    Refresh,
    /// Keep the embeddings of the last observed window for all steps.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterConfig {
    pub gcn: GcnConfig,
    pub svr: SvrConfig,
    pub embedding: EmbeddingMode,
    pub recursion: RecursionMode,
    /// Number of trailing in-sample residuals behind the predictive spread.
    pub residual_window: usize,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            gcn: GcnConfig::default(),
            svr: SvrConfig::default(),
            embedding: EmbeddingMode::Gcn,
            recursion: RecursionMode::Refresh,
            residual_window: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationTrainingSet {
    pub inputs: Vec<SvrInput>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcsvrModel {
    pub gcn: GcnModel,
    pub svrs: Vec<SvrModel>,
    pub network: StationNetwork,
    pub embedding: EmbeddingMode,
    pub recursion: RecursionMode,
    /// Standard deviation of the trailing in-sample one-step residuals.
    pub residual_sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBundle {
    /// Date of the first forecast day.
    pub origin: NaiveDate,
    pub station_ids: Vec<String>,
    /// `q×N`.
    pub values: Matrix,
    pub sigma: Option<Vec<f64>>,
}

impl ForecastBundle {
    pub fn horizon(&self) -> usize {
        self.values.rows()
    }
}

/// Stacks the `p`-day windows ending just before each target day in
/// `targets` (row `s·N + i` is station `i`'s window for the `s`-th day).
fn stacked_windows(values: &Matrix, p: usize, targets: std::ops::Range<usize>) -> Matrix {
    let n = values.cols();
    let mut out = Matrix::zeros(targets.len() * n, p);
    for (s, t) in targets.enumerate() {
        for i in 0..n {
            let row = out.row_mut(s * n + i);
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = values[(t - p + k, i)];
            }
        }
    }
    out
}

fn embeddings(gcn: &GcnModel, mode: EmbeddingMode, windows: &Matrix, network: &StationNetwork) -> Result<Matrix> {
    match mode {
        EmbeddingMode::Gcn => gcn.embed_stacked(windows, network),
        EmbeddingMode::Zeroed => Ok(Matrix::zeros(windows.rows(), gcn.embed_dim())),
    }
}

/// Per-station `([lag window ‖ embedding], next value)` pairs for every day
/// with a full window of history.
pub fn build_training_set(
    values: &Matrix,
    network: &StationNetwork,
    gcn: &GcnModel,
    mode: EmbeddingMode,
) -> Result<Vec<StationTrainingSet>> {
    let p = gcn.input_window();
    let (t_len, n) = values.shape();
    if n != network.len() {
        return Err(Error::invalid(format!("panel has {n} stations, network has {}", network.len())));
    }
    if t_len < p + 1 {
        return Err(Error::invalid(format!(
            "need at least {} days of history for window {p}, got {t_len}",
            p + 1
        )));
    }
    let windows = stacked_windows(values, p, p..t_len);
    let z = embeddings(gcn, mode, &windows, network)?;
    let mut sets: Vec<StationTrainingSet> = (0..n)
        .map(|_| StationTrainingSet {
            inputs: Vec::with_capacity(t_len - p),
            targets: Vec::with_capacity(t_len - p),
        })
        .collect();
    for (s, t) in (p..t_len).enumerate() {
        for (i, set) in sets.iter_mut().enumerate() {
            let r = s * n + i;
            set.inputs.push(SvrInput::new(windows.row(r).to_vec(), z.row(r).to_vec()));
            set.targets.push(values[(t, i)]);
        }
    }
    Ok(sets)
}

fn population_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn check_station_order(panel: &PanelSeries, network: &StationNetwork) -> Result<()> {
    if panel.station_ids() != network.station_ids().as_slice() {
        return Err(Error::invalid("panel station order does not match the network"));
    }
    Ok(())
}

/// Trains the encoder (unless embeddings are zeroed), freezes it, and fits
/// one regressor per station. Stations are fitted in parallel on the
/// current rayon pool; results are ordered by station.
pub fn fit(panel: &PanelSeries, network: &StationNetwork, config: &ForecasterConfig) -> Result<GcsvrModel> {
    check_station_order(panel, network)?;
    if panel.missing_count() > 0 {
        return Err(Error::invalid("panel has missing values; impute first"));
    }
    let gcn = match config.embedding {
        EmbeddingMode::Gcn => gcn::train(panel.values(), network, &config.gcn)?,
        EmbeddingMode::Zeroed => GcnModel::initialized(config.gcn.clone(), network.len())?,
    };
    fit_with_encoder(panel, network, gcn, config)
}

/// Fits the per-station regressors on top of an already trained encoder.
pub fn fit_with_encoder(
    panel: &PanelSeries,
    network: &StationNetwork,
    gcn: GcnModel,
    config: &ForecasterConfig,
) -> Result<GcsvrModel> {
    check_station_order(panel, network)?;
    if panel.missing_count() > 0 {
        return Err(Error::invalid("panel has missing values; impute first"));
    }
    if gcn.input_window() != config.gcn.input_window {
        return Err(Error::invalid("encoder input window does not match the configuration"));
    }
    let values = panel.values();
    let sets = build_training_set(values, network, &gcn, config.embedding)?;
    let fitted: Vec<(SvrModel, f64)> = sets
        .par_iter()
        .map(|set| {
            let model = train_svr(&set.inputs, &set.targets, &config.svr)?;
            let from = set.inputs.len().saturating_sub(config.residual_window.max(1));
            let resid = set.inputs[from..]
                .iter()
                .zip(&set.targets[from..])
                .map(|(x, y)| Ok(y - model.predict(x)?))
                .collect::<Result<Vec<f64>>>()?;
            Ok((model, population_std(&resid).max(SIGMA_FLOOR)))
        })
        .collect::<Result<_>>()?;
    let (svrs, residual_sigma) = fitted.into_iter().unzip();
    Ok(GcsvrModel {
        gcn,
        svrs,
        network: network.clone(),
        embedding: config.embedding,
        recursion: config.recursion,
        residual_sigma,
    })
}

impl GcsvrModel {
    pub fn input_window(&self) -> usize {
        self.gcn.input_window()
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.network.station_ids()
    }

    fn predict_step(&self, window: &Matrix, z: &Matrix) -> Result<Vec<f64>> {
        (0..self.svrs.len())
            .map(|i| {
                let mut feat = window.row(i).to_vec();
                feat.extend_from_slice(z.row(i));
                self.svrs[i].predict_features(&feat)
            })
            .collect()
    }

    /// `q×N` forecasts for the `q` days after the end of `history` (`T×N`).
    pub fn forecast_values(&self, history: &Matrix, q: usize) -> Result<Matrix> {
        if q < 1 {
            return Err(Error::invalid("forecast horizon must be at least 1"));
        }
        let p = self.input_window();
        let (t_len, n) = history.shape();
        if n != self.svrs.len() {
            return Err(Error::invalid(format!("history has {n} stations, model has {}", self.svrs.len())));
        }
        if t_len < p {
            return Err(Error::invalid(format!("need {p} days of history, got {t_len}")));
        }
        let mut window = stacked_windows(history, p, t_len..t_len + 1);
        let mut frozen: Option<Matrix> = None;
        let mut out = Matrix::zeros(q, n);
        for h in 0..q {
            let z = match (self.recursion, &frozen) {
                (RecursionMode::Frozen, Some(z)) => z.clone(),
                _ => {
                    let z = embeddings(&self.gcn, self.embedding, &window, &self.network)?;
                    if self.recursion == RecursionMode::Frozen {
                        frozen = Some(z.clone());
                    }
                    z
                }
            };
            let pred = self.predict_step(&window, &z)?;
            for i in 0..n {
                let row = window.row_mut(i);
                row.copy_within(1.., 0);
                row[p - 1] = pred[i];
                out[(h, i)] = pred[i];
            }
        }
        Ok(out)
    }

    /// Recursive forecasts for the `q` days following the panel.
    pub fn forecast(&self, panel: &PanelSeries, q: usize) -> Result<ForecastBundle> {
        check_station_order(panel, &self.network)?;
        let end = panel.end().ok_or_else(|| Error::invalid("empty panel"))?;
        Ok(ForecastBundle {
            origin: end + Days::new(1),
            station_ids: panel.station_ids().to_vec(),
            values: self.forecast_values(panel.values(), q)?,
            sigma: Some(self.residual_sigma.clone()),
        })
    }

    /// One-step forecasts for days `from..to` of `values`, each using the
    /// observed window before that day.
    pub fn one_step_forecasts(&self, values: &Matrix, from: usize, to: usize) -> Result<Matrix> {
        let p = self.input_window();
        if from < p || to > values.rows() || from > to {
            return Err(Error::invalid(format!(
                "one-step range {from}..{to} needs {p} prior days within {} rows",
                values.rows()
            )));
        }
        let n = values.cols();
        if from == to {
            return Ok(Matrix::zeros(0, n));
        }
        let windows = stacked_windows(values, p, from..to);
        let z = embeddings(&self.gcn, self.embedding, &windows, &self.network)?;
        let mut out = Matrix::zeros(to - from, n);
        for s in 0..to - from {
            for i in 0..n {
                let r = s * n + i;
                let mut feat = windows.row(r).to_vec();
                feat.extend_from_slice(z.row(r));
                out[(s, i)] = self.svrs[i].predict_features(&feat)?;
            }
        }
        Ok(out)
    }
}

/// Repeats each station's last value for `q` days.
pub fn naive_baseline(panel: &PanelSeries, q: usize) -> Result<ForecastBundle> {
    let end = panel.end().ok_or_else(|| Error::invalid("naive forecast needs at least one observation"))?;
    if q < 1 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    let last = panel.values().row(panel.len() - 1).to_vec();
    let mut values = Matrix::zeros(q, panel.n_stations());
    for h in 0..q {
        values.row_mut(h).copy_from_slice(&last);
    }
    // spread of the one-step naive errors over the panel
    let sigma = (0..panel.n_stations())
        .map(|i| {
            let col = panel.column(i);
            let diffs: Vec<f64> = col.windows(2).map(|w| w[1] - w[0]).collect();
            if diffs.is_empty() {
                SIGMA_FLOOR
            } else {
                population_std(&diffs).max(SIGMA_FLOOR)
            }
        })
        .collect();
    Ok(ForecastBundle {
        origin: end + Days::new(1),
        station_ids: panel.station_ids().to_vec(),
        values,
        sigma: Some(sigma),
    })
}
