//! Run configuration: defaults, a flat `key = value` file, then command-line
//! overrides, applied in that order.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalConfig, ScalerKind};
use crate::error::{Error, Result};
use crate::forecast::{EmbeddingMode, ForecasterConfig, RecursionMode};
use crate::graph::GraphParams;
use crate::schedule::Horizon;
use crate::svr::{GammaMode, KernelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GcnRefit {
    /// Retrain the encoder on every rolling window's training span.
    PerWindow,
    /// Train it once on the first window's span and reuse it.
    Once,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub stations: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub out: PathBuf,
    pub graph: GraphParams,
    pub forecaster: ForecasterConfig,
    pub horizon: u32,
    pub test_year_start: Option<NaiveDate>,
    pub conformal: ConformalConfig,
    pub pinball_rho: f64,
    pub gcn_refit: GcnRefit,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stations: None,
            panel: None,
            out: PathBuf::from("out"),
            graph: GraphParams::default(),
            forecaster: ForecasterConfig::default(),
            horizon: 30,
            test_year_start: None,
            conformal: ConformalConfig::default(),
            pinball_rho: 0.8,
            gcn_refit: GcnRefit::PerWindow,
            seed: 0,
            jobs: 1,
        }
    }
}

/// Keys accepted in a config file, in documentation order.
pub const KEYS: &[&str] = &[
    "stations",
    "panel",
    "out",
    "sigma_tilde_sq",
    "eps_sparsity",
    "input_window",
    "hidden_dim",
    "embed_dim",
    "dropout",
    "epochs",
    "lr",
    "weight_decay",
    "weighted_mean",
    "svr_c",
    "svr_epsilon",
    "svr_kernel",
    "svr_gamma",
    "svr_tol",
    "svr_max_passes",
    "embedding",
    "recursion",
    "residual_window",
    "horizon",
    "test_year_start",
    "rho",
    "upsilon",
    "scaler",
    "finite_sample",
    "pinball_rho",
    "gcn_refit",
    "seed",
    "jobs",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {value:?}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.forecaster;
        match key {
            "stations" => self.stations = Some(PathBuf::from(value)),
            "panel" => self.panel = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "sigma_tilde_sq" => {
                self.graph.sigma_tilde_sq = match value {
                    "auto" | "default" => None,
                    v => Some(num(key, v)?),
                }
            }
            "eps_sparsity" => self.graph.eps_sparsity = num(key, value)?,
            "input_window" => f.gcn.input_window = num(key, value)?,
            "hidden_dim" => f.gcn.hidden_dim = num(key, value)?,
            "embed_dim" => f.gcn.embed_dim = num(key, value)?,
            "dropout" => f.gcn.dropout_rate = num(key, value)?,
            "epochs" => f.gcn.epochs = num(key, value)?,
            "lr" => f.gcn.lr = num(key, value)?,
            "weight_decay" => f.gcn.weight_decay = num(key, value)?,
            "weighted_mean" => f.gcn.weighted_mean = boolean(key, value)?,
            "svr_c" => f.svr.c = num(key, value)?,
            "svr_epsilon" => f.svr.epsilon = num(key, value)?,
            "svr_kernel" => {
                f.svr.kernel = match value {
                    "rbf" => KernelKind::Rbf,
                    "linear" => KernelKind::Linear,
                    _ => return Err(Error::invalid(format!("{key}: expected rbf or linear, got {value:?}"))),
                }
            }
            "svr_gamma" => {
                f.svr.gamma_mode = match value {
                    "scale" => GammaMode::Scale,
                    v => GammaMode::Fixed(num(key, v)?),
                }
            }
            "svr_tol" => f.svr.tol = num(key, value)?,
            "svr_max_passes" => f.svr.max_passes = num(key, value)?,
            "embedding" => {
                f.embedding = match value {
                    "gcn" => EmbeddingMode::Gcn,
                    "zeroed" => EmbeddingMode::Zeroed,
                    _ => return Err(Error::invalid(format!("{key}: expected gcn or zeroed, got {value:?}"))),
                }
            }
            "recursion" => {
                f.recursion = match value {
                    "refresh" => RecursionMode::Refresh,
                    "frozen" => RecursionMode::Frozen,
                    _ => return Err(Error::invalid(format!("{key}: expected refresh or frozen, got {value:?}"))),
                }
            }
            "residual_window" => f.residual_window = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "test_year_start" => {
                self.test_year_start = Some(
                    NaiveDate::parse_from_str(value, "%Y-%m-%d")
                        .map_err(|_| Error::invalid(format!("{key}: expected YYYY-MM-DD, got {value:?}")))?,
                )
            }
            "rho" => self.conformal.rho = num(key, value)?,
            "upsilon" => self.conformal.upsilon = num(key, value)?,
            "scaler" => {
                self.conformal.scaler = match value {
                    "constant" => ScalerKind::Constant,
                    "rolling-mae" => ScalerKind::RollingMae,
                    _ => {
                        return Err(Error::invalid(format!(
                            "{key}: expected constant or rolling-mae, got {value:?}"
                        )))
                    }
                }
            }
            "finite_sample" => self.conformal.finite_sample = boolean(key, value)?,
            "pinball_rho" => self.pinball_rho = num(key, value)?,
            "gcn_refit" => {
                self.gcn_refit = match value {
                    "per-window" => GcnRefit::PerWindow,
                    "once" => GcnRefit::Once,
                    _ => return Err(Error::invalid(format!("{key}: expected per-window or once, got {value:?}"))),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "jobs" => self.jobs = num(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `path`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: k as u64 + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, got {line:?}")))?;
            self.apply(key.trim(), value.trim()).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        Horizon::from_days(self.horizon)?;
        self.forecaster.gcn.validate()?;
        self.forecaster.svr.validate()?;
        self.conformal.validate()?;
        if !(self.pinball_rho > 0.0 && self.pinball_rho < 1.0) {
            return Err(Error::invalid("pinball_rho must be in (0, 1)"));
        }
        if self.jobs == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        if self.forecaster.residual_window == 0 {
            return Err(Error::invalid("residual_window must be at least 1"));
        }
        Ok(())
    }

    /// Parameters that shape the results, for embedding in output files.
    /// Paths and the degree of parallelism are left out so that identical
    /// experiments produce identical files.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "graph": self.graph,
            "forecaster": self.forecaster,
            "horizon": self.horizon,
            "test_year_start": self.test_year_start,
            "conformal": self.conformal,
            "pinball_rho": self.pinball_rho,
            "gcn_refit": self.gcn_refit,
            "seed": self.seed,
        })
    }

    /// Flat `key = value` rendering of every setting.
    pub fn to_text(&self) -> String {
        let f = &self.forecaster;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let lines = [
            ("stations", path(&self.stations)),
            ("panel", path(&self.panel)),
            ("out", self.out.display().to_string()),
            (
                "sigma_tilde_sq",
                self.graph.sigma_tilde_sq.map_or("auto".into(), |s| s.to_string()),
            ),
            ("eps_sparsity", self.graph.eps_sparsity.to_string()),
            ("input_window", f.gcn.input_window.to_string()),
            ("hidden_dim", f.gcn.hidden_dim.to_string()),
            ("embed_dim", f.gcn.embed_dim.to_string()),
            ("dropout", f.gcn.dropout_rate.to_string()),
            ("epochs", f.gcn.epochs.to_string()),
            ("lr", f.gcn.lr.to_string()),
            ("weight_decay", f.gcn.weight_decay.to_string()),
            ("weighted_mean", f.gcn.weighted_mean.to_string()),
            ("svr_c", f.svr.c.to_string()),
            ("svr_epsilon", f.svr.epsilon.to_string()),
            (
                "svr_kernel",
                match f.svr.kernel {
                    KernelKind::Rbf => "rbf".into(),
                    KernelKind::Linear => "linear".into(),
                },
            ),
            (
                "svr_gamma",
                match f.svr.gamma_mode {
                    GammaMode::Scale => "scale".into(),
                    GammaMode::Fixed(g) => g.to_string(),
                },
            ),
            ("svr_tol", f.svr.tol.to_string()),
            ("svr_max_passes", f.svr.max_passes.to_string()),
            (
                "embedding",
                match f.embedding {
                    EmbeddingMode::Gcn => "gcn".into(),
                    EmbeddingMode::Zeroed => "zeroed".into(),
                },
            ),
            (
                "recursion",
                match f.recursion {
                    RecursionMode::Refresh => "refresh".into(),
                    RecursionMode::Frozen => "frozen".into(),
                },
            ),
            ("residual_window", f.residual_window.to_string()),
            ("horizon", self.horizon.to_string()),
            (
                "test_year_start",
                self.test_year_start.map_or(String::new(), |d| d.to_string()),
            ),
            ("rho", self.conformal.rho.to_string()),
            ("upsilon", self.conformal.upsilon.to_string()),
            (
                "scaler",
                match self.conformal.scaler {
                    ScalerKind::Constant => "constant".into(),
                    ScalerKind::RollingMae => "rolling-mae".into(),
                },
            ),
            ("finite_sample", self.conformal.finite_sample.to_string()),
            ("pinball_rho", self.pinball_rho.to_string()),
            (
                "gcn_refit",
                match self.gcn_refit {
                    GcnRefit::PerWindow => "per-window".into(),
                    GcnRefit::Once => "once".into(),
                },
            ),
            ("seed", self.seed.to_string()),
            ("jobs", self.jobs.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in lines {
            if !v.is_empty() {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}
