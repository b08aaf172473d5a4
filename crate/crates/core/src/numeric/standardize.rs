use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Floor applied to fitted standard deviations so constant features map to 0.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature z-score transform (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    means: Vec<f64>,
    stddevs: Vec<f64>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::invalid(format!(
                "standardizer needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let dim = rows[0].as_ref().len();
        if dim == 0 {
            return Err(Error::invalid("standardizer needs at least one feature"));
        }
        let n = rows.len() as f64;
        let mut means = vec![0.0; dim];
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::invalid("ragged feature rows"));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite feature value"));
            }
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; dim];
        for r in rows {
            for ((acc, v), m) in vars.iter_mut().zip(r.as_ref()).zip(&means) {
                *acc += (v - m) * (v - m);
            }
        }
        let stddevs = vars
            .into_iter()
            .map(|v| (v / n).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { means, stddevs })
    }

    /// Fits one scaler per matrix column.
    pub fn fit_columns(m: &Matrix) -> Result<Self> {
        let rows: Vec<&[f64]> = (0..m.rows()).map(|i| m.row(i)).collect();
        Self::fit(&rows)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            means: vec![0.0; dim],
            stddevs: vec![1.0; dim],
        }
    }

    pub fn from_parts(means: Vec<f64>, stddevs: Vec<f64>) -> Result<Self> {
        if means.len() != stddevs.len() || stddevs.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("standardizer parts must match and stddevs be positive"));
        }
        Ok(Self { means, stddevs })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stddevs(&self) -> &[f64] {
        &self.stddevs
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = x.to_vec();
        self.apply_inplace(&mut out)?;
        Ok(out)
    }

    pub fn apply_inplace(&self, x: &mut [f64]) -> Result<()> {
        self.check_len(x.len())?;
        for ((v, m), s) in x.iter_mut().zip(&self.means).zip(&self.stddevs) {
            *v = (*v - m) / s;
        }
        Ok(())
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len())?;
        Ok(z.iter()
            .zip(&self.means)
            .zip(&self.stddevs)
            .map(|((v, m), s)| v * s + m)
            .collect())
    }

    /// Transforms a single value of feature `j`.
    #[inline]
    pub fn apply_one(&self, j: usize, x: f64) -> f64 {
        (x - self.means[j]) / self.stddevs[j]
    }

    #[inline]
    pub fn inverse_one(&self, j: usize, z: f64) -> f64 {
        z * self.stddevs[j] + self.means[j]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::invalid(format!(
                "expected {} features, got {len}",
                self.dim()
            )));
        }
        Ok(())
    }
}
