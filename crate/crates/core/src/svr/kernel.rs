use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub kind: KernelKind,
    pub gamma: f64,
}

impl KernelParams {
    pub fn rbf(gamma: f64) -> Result<Self> {
        let k = Self {
            kind: KernelKind::Rbf,
            gamma,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            gamma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Rbf && !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!("RBF gamma must be finite and positive, got {}", self.gamma)));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Linear => u.iter().zip(v).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        if u.len() != v.len() {
            return Err(Error::invalid(format!(
                "kernel arguments differ in length: {} vs {}",
                u.len(),
                v.len()
            )));
        }
        Ok(self.eval_unchecked(u, v))
    }
}

/// `exp(-gamma * ||u - v||^2)`.
pub fn rbf_kernel(u: &[f64], v: &[f64], gamma: f64) -> Result<f64> {
    KernelParams::rbf(gamma)?.eval(u, v)
}

/// `1 / (n_features * pooled population variance)`, or `1 / n_features`
/// when every value is identical.
pub fn gamma_scale(inputs: &Matrix) -> Result<f64> {
    let d = inputs.cols();
    if d == 0 || inputs.rows() == 0 {
        return Err(Error::invalid("gamma_scale needs at least one feature and one sample"));
    }
    let vals = inputs.as_slice();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        Ok(1.0 / (d as f64 * var))
    } else {
        log::warn!("training features have zero variance; using gamma = 1/{d}");
        Ok(1.0 / d as f64)
    }
}

/// Kernel rows over a fixed training set: a dense matrix for small problems,
/// otherwise rows computed on demand and kept in a least-recently-used cache.
pub(crate) enum KernelStore<'a> {
    Full(Matrix),
    Lru(LruRows<'a>),
}

pub(crate) struct LruRows<'a> {
    x: &'a Matrix,
    kernel: KernelParams,
    capacity: usize,
    clock: u64,
    rows: HashMap<usize, (Rc<[f64]>, u64)>,
}

impl<'a> KernelStore<'a> {
    pub(crate) fn new(x: &'a Matrix, kernel: KernelParams, full_limit: usize, cache_rows: usize) -> Self {
        let n = x.rows();
        if n <= full_limit {
            let mut k = Matrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = kernel.eval_unchecked(x.row(i), x.row(j));
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
            KernelStore::Full(k)
        } else {
            KernelStore::Lru(LruRows {
                x,
                kernel,
                capacity: cache_rows.max(2),
                clock: 0,
                rows: HashMap::new(),
            })
        }
    }

    #[cfg(test)]
    pub(crate) fn is_cached_fully(&self) -> bool {
        matches!(self, KernelStore::Full(_))
    }

    /// Calls `f` with kernel rows `i` and `j`.
    pub(crate) fn with_rows<R>(&mut self, i: usize, j: usize, f: impl FnOnce(&[f64], &[f64]) -> R) -> R {
        match self {
            KernelStore::Full(k) => f(k.row(i), k.row(j)),
            KernelStore::Lru(cache) => {
                let ri = cache.row(i);
                let rj = cache.row(j);
                f(&ri, &rj)
            }
        }
    }

    pub(crate) fn diag(&self, i: usize) -> f64 {
        match self {
            KernelStore::Full(k) => k[(i, i)],
            KernelStore::Lru(c) => c.kernel.eval_unchecked(c.x.row(i), c.x.row(i)),
        }
    }
}

impl LruRows<'_> {
    fn row(&mut self, i: usize) -> Rc<[f64]> {
        self.clock += 1;
        let now = self.clock;
        if let Some(entry) = self.rows.get_mut(&i) {
            entry.1 = now;
            return entry.0.clone();
        }
        if self.rows.len() >= self.capacity {
            let oldest = self
                .rows
                .iter()
                .min_by_key(|(_, (_, stamp))| *stamp)
                .map(|(&k, _)| k)
                .expect("cache non-empty");
            self.rows.remove(&oldest);
        }
        let xi = self.x.row(i);
        let row: Rc<[f64]> = (0..self.x.rows())
            .map(|l| self.kernel.eval_unchecked(xi, self.x.row(l)))
            .collect();
        self.rows.insert(i, (row.clone(), now));
        row
    }
}
