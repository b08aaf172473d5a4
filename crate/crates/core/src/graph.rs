//! Weighted station graph: great-circle distances, Gaussian-kernel adjacency
//! with sparsification, degree, Laplacian and its largest eigenvalue.

use std::collections::HashSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, SeededRng};

/// IUGG mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Default sparsity threshold on kernel weights.
pub const DEFAULT_EPS_SPARSITY: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

impl Station {
    pub fn new(id: impl Into<String>, name: impl Into<String>, lat: f64, lon: f64) -> Result<Self> {
        let s = Self {
            id: id.into(),
            name: name.into(),
            lat,
            lon,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::invalid(format!(
                "station {} has out-of-range coordinates ({}, {})",
                self.id, self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// Great-circle distance on a sphere of radius `radius_km`.
pub fn haversine_with_radius(p: &Station, q: &Station, radius_km: f64) -> Result<f64> {
    p.validate()?;
    q.validate()?;
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dphi = phi1 - phi2;
    let dlambda = (p.lon - q.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * radius_km * h.clamp(0.0, 1.0).sqrt().asin())
}

/// Haversine distance in km using [`EARTH_RADIUS_KM`].
pub fn haversine_km(p: &Station, q: &Station) -> Result<f64> {
    haversine_with_radius(p, q, EARTH_RADIUS_KM)
}

/// Symmetric matrix of pairwise distances with zero diagonal.
pub fn distance_matrix(stations: &[Station]) -> Result<Matrix> {
    let n = stations.len();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = haversine_km(&stations[i], &stations[j])?;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Kernel bandwidth default: squared mean pairwise distance.
pub fn default_sigma_tilde_sq(stations: &[Station]) -> Result<f64> {
    let n = stations.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 stations"));
    }
    let d = distance_matrix(stations)?;
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += d[(i, j)];
        }
    }
    let mean = total / (n * (n - 1) / 2) as f64;
    if !(mean > 0.0) {
        return Err(Error::invalid("all stations are co-located; cannot derive a kernel bandwidth"));
    }
    Ok(mean * mean)
}

/// Distance beyond which two stations are disconnected; `None` when `eps == 0`.
pub fn cutoff_distance(sigma_tilde_sq: f64, eps_sparsity: f64) -> Option<f64> {
    (eps_sparsity > 0.0).then(|| (-sigma_tilde_sq * eps_sparsity.ln()).sqrt())
}

/// Graph construction parameters; `sigma_tilde_sq = None` selects the default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub sigma_tilde_sq: Option<f64>,
    pub eps_sparsity: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            sigma_tilde_sq: None,
            eps_sparsity: DEFAULT_EPS_SPARSITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationNetwork {
    stations: Vec<Station>,
    adjacency: Matrix,
    degree: Vec<f64>,
    laplacian: Matrix,
    zeta_max: f64,
    sigma_tilde_sq: f64,
    eps_sparsity: f64,
    neighbors: Vec<Vec<usize>>,
    warnings: Vec<String>,
}

/// Builds the network with resolved defaults.
pub fn build_network(stations: Vec<Station>, params: &GraphParams) -> Result<StationNetwork> {
    let sigma = match params.sigma_tilde_sq {
        Some(s) => s,
        None => default_sigma_tilde_sq(&stations)?,
    };
    build_adjacency(stations, sigma, params.eps_sparsity)
}

/// Gaussian-kernel adjacency `a_ij = exp(-d_ij² / σ̃²)`, zeroed on the
/// diagonal and wherever `d_ij` exceeds the sparsity cutoff.
pub fn build_adjacency(
    stations: Vec<Station>,
    sigma_tilde_sq: f64,
    eps_sparsity: f64,
) -> Result<StationNetwork> {
    if stations.len() < 2 {
        return Err(Error::invalid("need at least 2 stations"));
    }
    if !(sigma_tilde_sq > 0.0) || !sigma_tilde_sq.is_finite() {
        return Err(Error::invalid(format!(
            "kernel bandwidth must be positive, got {sigma_tilde_sq}"
        )));
    }
    if !(0.0..1.0).contains(&eps_sparsity) {
        return Err(Error::invalid(format!(
            "sparsity threshold must be in [0, 1), got {eps_sparsity}"
        )));
    }
    check_unique_ids(&stations)?;
    let d = distance_matrix(&stations)?;
    let cutoff = cutoff_distance(sigma_tilde_sq, eps_sparsity);
    let n = stations.len();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dij = d[(i, j)];
            // Compare distances rather than weights so the zero pattern matches
            // the cutoff exactly.
            if cutoff.is_some_and(|c| dij > c) {
                continue;
            }
            let w = (-dij * dij / sigma_tilde_sq).exp();
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    StationNetwork::from_adjacency(stations, a, sigma_tilde_sq, eps_sparsity)
}

fn check_unique_ids(stations: &[Station]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in stations {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::invalid(format!("duplicate station id {}", s.id)));
        }
    }
    Ok(())
}

impl StationNetwork {
    /// Assembles a network from a precomputed adjacency matrix.
    pub fn from_adjacency(
        stations: Vec<Station>,
        adjacency: Matrix,
        sigma_tilde_sq: f64,
        eps_sparsity: f64,
    ) -> Result<Self> {
        let n = stations.len();
        check_unique_ids(&stations)?;
        for s in &stations {
            s.validate()?;
        }
        if adjacency.shape() != (n, n) {
            return Err(Error::invalid(format!(
                "adjacency must be {n}x{n}, got {:?}",
                adjacency.shape()
            )));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::invalid("adjacency diagonal must be zero"));
            }
            for j in 0..n {
                let w = adjacency[(i, j)];
                if !(0.0..=1.0).contains(&w) || w != adjacency[(j, i)] {
                    return Err(Error::invalid(
                        "adjacency must be symmetric with entries in [0, 1]",
                    ));
                }
            }
        }
        let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).iter().sum()).collect();
        let mut laplacian = adjacency.clone();
        laplacian.scale(-1.0);
        for (i, d) in degree.iter().enumerate() {
            laplacian[(i, i)] = *d;
        }
        let zeta_max = estimate_zeta_max(&laplacian)?;
        let neighbors: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| adjacency[(i, j)] > 0.0).collect())
            .collect();
        let mut warnings = Vec::new();
        for (i, nb) in neighbors.iter().enumerate() {
            if nb.is_empty() {
                let msg = format!("station {} has no neighbours", stations[i].id);
                warn!("{msg}");
                warnings.push(msg);
            }
        }
        Ok(Self {
            stations,
            adjacency,
            degree,
            laplacian,
            zeta_max,
            sigma_tilde_sq,
            eps_sparsity,
            neighbors,
            warnings,
        })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn laplacian(&self) -> &Matrix {
        &self.laplacian
    }

    pub fn zeta_max(&self) -> f64 {
        self.zeta_max
    }

    pub fn sigma_tilde_sq(&self) -> f64 {
        self.sigma_tilde_sq
    }

    pub fn eps_sparsity(&self) -> f64 {
        self.eps_sparsity
    }

    /// `{ j : a_ij > 0 }` in ascending order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Same network with nodes reordered so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<StationNetwork> {
        let n = self.len();
        if perm.len() != n || perm.iter().collect::<HashSet<_>>().len() != n || perm.iter().any(|&p| p >= n) {
            return Err(Error::invalid("not a permutation of the station indices"));
        }
        let stations = perm.iter().map(|&p| self.stations[p].clone()).collect();
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = self.adjacency[(perm[i], perm[j])];
            }
        }
        StationNetwork::from_adjacency(stations, a, self.sigma_tilde_sq, self.eps_sparsity)
    }
}

/// Largest eigenvalue of a symmetric matrix by power iteration.
///
/// Starts from a fixed pseudo-random vector, stops when the Rayleigh quotient
/// changes by less than 1e-10 (relative) or after 10⁴ iterations. Matrices that
/// are not diagonally dominant are shifted by their Gershgorin radius so the
/// dominant eigenvalue is the largest one.
pub fn estimate_zeta_max(m: &Matrix) -> Result<f64> {
    if !m.is_symmetric(1e-12) {
        return Err(Error::invalid("eigenvalue estimate requires a symmetric matrix"));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut shift = 0.0_f64;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        shift = shift.max(off - m[(i, i)]);
    }
    let mut rng = SeededRng::new(0x5EED_2E07);
    let mut x: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.5) * if rng.bernoulli(0.5) { 1.0 } else { -1.0 }).collect();
    normalize(&mut x);
    let mut theta = f64::NAN;
    for _ in 0..10_000 {
        let mut y = m.matvec(&x)?;
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += shift * xi;
        }
        let rq: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0 - shift);
        }
        y.iter_mut().for_each(|v| *v /= norm);
        x = y;
        let done = theta.is_finite() && (rq - theta).abs() <= 1e-10 * rq.abs().max(f64::MIN_POSITIVE);
        theta = rq;
        if done {
            break;
        }
    }
    // Final Rayleigh quotient on the unshifted matrix.
    let mx = m.matvec(&x)?;
    Ok(mx.iter().zip(&x).map(|(a, b)| a * b).sum())
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}
