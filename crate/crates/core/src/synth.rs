//! Synthetic graph-coupled autoregressive panels with known parameters.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_network, GraphParams, Station, StationNetwork};
use crate::numeric::{Matrix, SeededRng};
use crate::panel::PanelSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Ring,
    Grid,
    TwoCluster,
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Topology::Ring),
            "grid" => Ok(Topology::Grid),
            "two-cluster" => Ok(Topology::TwoCluster),
            other => Err(Error::invalid(format!("unknown topology {other}; use ring, grid or two-cluster"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub topology: Topology,
    /// Own-lag coefficient `a`.
    pub ar: f64,
    /// Weight `c` on the neighbour mean.
    pub coupling: f64,
    pub noise_sigma: f64,
    pub days: usize,
    pub seed: u64,
    pub start: NaiveDate,
    /// Constant added to every value so series look like concentrations.
    pub level: f64,
    pub burn_in: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            nodes: 10,
            topology: Topology::Ring,
            ar: 0.5,
            coupling: 0.4,
            noise_sigma: 1.0,
            days: 1000,
            seed: 0,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            level: 100.0,
            burn_in: 200,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::invalid("synthetic network needs at least 2 nodes"));
        }
        if self.days < 2 {
            return Err(Error::invalid("synthetic panel needs at least 2 days"));
        }
        if !(self.ar.abs() <= 1.0) {
            return Err(Error::invalid(format!("AR coefficient must satisfy |a| <= 1, got {}", self.ar)));
        }
        if !(self.coupling >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("coupling and noise must be non-negative"));
        }
        if self.ar.abs() + self.coupling >= 1.0 && self.noise_sigma > 0.0 {
            log::warn!(
                "|a| + c = {} >= 1: the generated process is not stationary",
                self.ar.abs() + self.coupling
            );
        }
        Ok(())
    }
}

/// Generating parameters returned alongside the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub spec: SyntheticSpec,
    pub neighbors: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub stations: Vec<Station>,
    pub network: StationNetwork,
    pub panel: PanelSeries,
    pub truth: SyntheticTruth,
}

const BASE_LAT: f64 = 28.6;
const BASE_LON: f64 = 77.2;

fn layout(topology: Topology, n: usize) -> Vec<(f64, f64)> {
    match topology {
        Topology::Ring => (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                (BASE_LAT + 0.2 * a.sin(), BASE_LON + 0.2 * a.cos())
            })
            .collect(),
        Topology::Grid => {
            let side = (n as f64).sqrt().ceil() as usize;
            (0..n)
                .map(|k| (BASE_LAT + 0.05 * (k / side) as f64, BASE_LON + 0.05 * (k % side) as f64))
                .collect()
        }
        Topology::TwoCluster => (0..n)
            .map(|k| {
                let cluster = k % 2;
                let member = k / 2;
                let a = 2.0 * std::f64::consts::PI * member as f64 / n.div_ceil(2) as f64;
                let centre_lon = BASE_LON + 3.0 * cluster as f64;
                (BASE_LAT + 0.02 * a.sin(), centre_lon + 0.02 * a.cos())
            })
            .collect(),
    }
}

/// Stations laid out for `topology`, the default-parameter network on them,
/// and `X_{t+1} = level + a·Y_t + c·mean_{j∈N(i)} Y_t^j + noise` where `Y = X − level`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let stations: Vec<Station> = layout(spec.topology, spec.nodes)
        .into_iter()
        .enumerate()
        .map(|(k, (lat, lon))| Station::new(format!("S{:02}", k + 1), format!("synthetic-{}", k + 1), lat, lon))
        .collect::<Result<_>>()?;
    let network = build_network(stations.clone(), &GraphParams::default())?;
    let neighbors: Vec<Vec<usize>> = (0..spec.nodes).map(|i| network.neighbors(i).to_vec()).collect();

    let root = SeededRng::new(spec.seed);
    let mut init_rng = root.split(0);
    let mut noise_rng = root.split(1);
    let mut y: Vec<f64> = (0..spec.nodes).map(|_| spec.noise_sigma * init_rng.normal()).collect();
    let step = |y: &[f64], rng: &mut SeededRng| -> Vec<f64> {
        (0..spec.nodes)
            .map(|i| {
                let nb = &neighbors[i];
                let mean = if nb.is_empty() {
                    0.0
                } else {
                    nb.iter().map(|&j| y[j]).sum::<f64>() / nb.len() as f64
                };
                spec.ar * y[i] + spec.coupling * mean + spec.noise_sigma * rng.normal()
            })
            .collect()
    };
    for _ in 0..spec.burn_in {
        y = step(&y, &mut noise_rng);
    }
    let mut values = Matrix::zeros(spec.days, spec.nodes);
    for t in 0..spec.days {
        for (i, v) in y.iter().enumerate() {
            values[(t, i)] = spec.level + v;
        }
        if t + 1 < spec.days {
            y = step(&y, &mut noise_rng);
        }
    }
    let ids = stations.iter().map(|s| s.id.clone()).collect();
    let panel = PanelSeries::complete(spec.start, ids, values)?;
    Ok(SyntheticData {
        stations,
        network,
        panel,
        truth: SyntheticTruth {
            spec: spec.clone(),
            neighbors,
        },
    })
}
