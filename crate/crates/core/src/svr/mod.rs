//! ε-insensitive support vector regression trained by SMO.
//!
//! Features and targets are standardized before solving, so `epsilon` and
//! `tol` are measured in target standard deviations.

mod kernel;
mod smo;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Standardizer};

pub use kernel::{gamma_scale, rbf_kernel, KernelKind, KernelParams};
pub use smo::SmoSummary;

use kernel::KernelStore;

const MODEL_FORMAT: &str = "gcsvr-svr";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    Scale,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: KernelKind,
    pub gamma_mode: GammaMode,
    pub tol: f64,
    /// The solver gives up after this many consecutive sweeps of `n` pair
    /// updates that fail to lower the largest KKT violation.
    pub max_passes: u64,
    /// Largest training set whose kernel matrix is held in full.
    pub full_kernel_limit: usize,
    /// Kernel rows kept when the matrix is not held in full.
    pub cache_rows: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            c: 100.0,
            epsilon: 0.1,
            kernel: KernelKind::Rbf,
            gamma_mode: GammaMode::Scale,
            tol: 1e-3,
            max_passes: 1000,
            full_kernel_limit: 20_000,
            cache_rows: 4096,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("C must be positive, got {}", self.c)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if let GammaMode::Fixed(g) = self.gamma_mode {
            KernelParams::rbf(g)?;
        }
        Ok(())
    }
}

/// Lag window followed by the station's spatial embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrInput {
    pub lags: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl SvrInput {
    pub fn new(lags: Vec<f64>, embedding: Vec<f64>) -> Self {
        Self { lags, embedding }
    }

    pub fn len(&self) -> usize {
        self.lags.len() + self.embedding.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.lags);
        v.extend_from_slice(&self.embedding);
        v
    }
}

/// `max(0, |y − yhat| − ε)`.
pub fn epsilon_loss(y: f64, yhat: f64, epsilon: f64) -> f64 {
    ((y - yhat).abs() - epsilon).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    format: String,
    version: u32,
    config: SvrConfig,
    kernel: KernelParams,
    feature_scaler: Standardizer,
    target_scaler: Standardizer,
    /// Standardized training vectors with nonzero coefficient.
    support_vectors: Matrix,
    support_indices: Vec<usize>,
    coefficients: Vec<f64>,
    /// Bias in standardized target units.
    bias: f64,
    summary: SmoSummary,
}

/// Signed dual coefficients and bias from one training run, with the
/// standardized training data they refer to.
#[derive(Debug, Clone)]
pub struct SvrFit {
    pub model: SvrModel,
    pub beta: Vec<f64>,
    pub scaled_inputs: Matrix,
    pub scaled_targets: Vec<f64>,
}

impl SvrModel {
    pub fn config(&self) -> &SvrConfig {
        &self.config
    }

    pub fn kernel(&self) -> KernelParams {
        self.kernel
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn support_indices(&self) -> &[usize] {
        &self.support_indices
    }

    pub fn support_vectors(&self) -> &Matrix {
        &self.support_vectors
    }

    pub fn feature_scaler(&self) -> &Standardizer {
        &self.feature_scaler
    }

    pub fn target_scaler(&self) -> &Standardizer {
        &self.target_scaler
    }

    pub fn summary(&self) -> &SmoSummary {
        &self.summary
    }

    pub fn n_features(&self) -> usize {
        self.feature_scaler.dim()
    }

    /// Decision value in standardized target units for standardized features.
    pub fn decision_scaled(&self, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for (k, coef) in self.coefficients.iter().enumerate() {
            s += coef * self.kernel.eval_unchecked(self.support_vectors.row(k), z);
        }
        s + self.bias
    }

    /// Prediction in original target units for raw features.
    pub fn predict_features(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.n_features() {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.n_features(),
                features.len()
            )));
        }
        let z = self.feature_scaler.apply(features)?;
        Ok(self.target_scaler.inverse_one(0, self.decision_scaled(&z)))
    }

    pub fn predict(&self, input: &SvrInput) -> Result<f64> {
        self.predict_features(&input.features())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: SvrModel = crate::io::read_json(path)?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported model {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        if m.coefficients.len() != m.support_vectors.rows()
            || m.support_indices.len() != m.coefficients.len()
            || m.support_vectors.cols() != m.feature_scaler.dim()
        {
            return Err(Error::invalid(format!("{}: inconsistent model dimensions", path.display())));
        }
        m.kernel.validate()?;
        Ok(m)
    }
}

pub fn train_svr(inputs: &[SvrInput], targets: &[f64], config: &SvrConfig) -> Result<SvrModel> {
    let rows: Vec<Vec<f64>> = inputs.iter().map(SvrInput::features).collect();
    train_svr_rows(&rows, targets, config)
}

pub fn train_svr_rows<R: AsRef<[f64]>>(rows: &[R], targets: &[f64], config: &SvrConfig) -> Result<SvrModel> {
    Ok(fit_svr(rows, targets, config, None)?.model)
}

/// Full training entry point; `observer` sees the coefficients after every
/// solver step.
pub fn fit_svr<R: AsRef<[f64]>>(
    rows: &[R],
    targets: &[f64],
    config: &SvrConfig,
    observer: Option<&mut dyn FnMut(&[f64])>,
) -> Result<SvrFit> {
    config.validate()?;
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid(format!("SVR needs at least 2 samples, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::invalid(format!("{n} inputs but {} targets", targets.len())));
    }
    if let Some(k) = targets.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite target at sample {k}")));
    }
    let feature_scaler = Standardizer::fit(rows)?;
    let d = feature_scaler.dim();
    let mut scaled = Vec::with_capacity(n * d);
    for r in rows {
        scaled.extend(feature_scaler.apply(r.as_ref())?);
    }
    let x = Matrix::from_vec(n, d, scaled)?;
    let target_rows: Vec<[f64; 1]> = targets.iter().map(|&t| [t]).collect();
    let target_scaler = Standardizer::fit(&target_rows)?;
    let y: Vec<f64> = targets.iter().map(|&t| target_scaler.apply_one(0, t)).collect();

    let kernel = match (config.kernel, config.gamma_mode) {
        (KernelKind::Linear, _) => KernelParams::linear(),
        (KernelKind::Rbf, GammaMode::Fixed(g)) => KernelParams::rbf(g)?,
        (KernelKind::Rbf, GammaMode::Scale) => KernelParams::rbf(gamma_scale(&x)?)?,
    };
    let mut store = KernelStore::new(&x, kernel, config.full_kernel_limit, config.cache_rows);
    let sol = smo::solve(
        smo::SmoProblem {
            kernel: &mut store,
            y: &y,
            c: config.c,
            epsilon: config.epsilon,
            tol: config.tol,
            max_stalled_sweeps: config.max_passes,
        },
        observer,
    );
    if !sol.summary.converged {
        log::warn!(
            "SVR solver stopped after {} iterations with KKT violation {:.3e}",
            sol.summary.iterations,
            sol.summary.max_violation
        );
    }

    let support_indices: Vec<usize> = (0..n).filter(|&l| sol.beta[l] != 0.0).collect();
    let mut sv = Vec::with_capacity(support_indices.len() * d);
    for &l in &support_indices {
        sv.extend_from_slice(x.row(l));
    }
    let model = SvrModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: config.clone(),
        kernel,
        feature_scaler,
        target_scaler,
        support_vectors: Matrix::from_vec(support_indices.len(), d, sv)?,
        coefficients: support_indices.iter().map(|&l| sol.beta[l]).collect(),
        support_indices,
        bias: sol.bias,
        summary: sol.summary,
    };
    let fit = SvrFit {
        model,
        beta: sol.beta,
        scaled_inputs: x,
        scaled_targets: y,
    };
    debug_assert!(fit.beta.iter().sum::<f64>().abs() <= 1e-9, "sum of coefficients drifted from zero");
    debug_assert!(fit.beta.iter().all(|b| b.abs() <= config.c + 1e-12), "coefficient outside the box");
    if fit.model.summary.converged {
        debug_assert!(
            check_kkt(&fit, config.tol + 1e-9).is_empty(),
            "KKT conditions violated after convergence"
        );
    }
    Ok(fit)
}

/// Indices whose ε-KKT conditions fail by more than `tol`, using training
/// errors `f(v_ℓ) − y_ℓ` in standardized units.
pub fn check_kkt(fit: &SvrFit, tol: f64) -> Vec<usize> {
    let c = fit.model.config.c;
    let eps = fit.model.config.epsilon;
    let mut bad = Vec::new();
    for (l, &b) in fit.beta.iter().enumerate() {
        let err = fit.model.decision_scaled(fit.scaled_inputs.row(l)) - fit.scaled_targets[l];
        let ok = if b == 0.0 {
            err.abs() <= eps + tol
        } else if b >= c {
            err <= -eps + tol
        } else if b <= -c {
            err >= eps - tol
        } else if b > 0.0 {
            (err + eps).abs() <= tol
        } else {
            (err - eps).abs() <= tol
        };
        if !ok {
            bad.push(l);
        }
    }
    bad
}
