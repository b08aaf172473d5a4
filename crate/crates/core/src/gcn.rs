//! Two-layer graph-convolutional encoder.
//!
//! Layer `k` maps each station's representation with
//! `h_i ← g(W_kᵀ · mean_{j∈N(i)} h_j + B_kᵀ · h_i)`, where `g` is a rectifier
//! (followed by dropout during training) after the first layer and the
//! identity after the second. The second-layer output is the station's
//! spatial embedding. A scalar readout head on top of the embedding predicts
//! the next-day (standardized) value and is only used for training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::StationNetwork;
use crate::numeric::{gemm, AdamConfig, AdamState, Matrix, SeededRng, Standardizer};

const CHECKPOINT_FORMAT: &str = "gcsvr-gcn";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub input_window: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Aggregate neighbours with adjacency weights instead of a plain mean.
    pub weighted_mean: bool,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            input_window: 24,
            hidden_dim: 64,
            embed_dim: 32,
            dropout_rate: 0.2,
            epochs: 100,
            lr: 1e-3,
            weight_decay: 5e-4,
            seed: 0,
            weighted_mean: false,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_window == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("GCN dimensions must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must be in [0, 1)"));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid("learning rate must be positive and weight decay non-negative"));
        }
        Ok(())
    }
}

/// Learnable tensors. The head bias is kept as a 1×1 matrix so every
/// parameter can be handled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub head: Matrix,
    pub head_bias: Matrix,
}

pub const PARAM_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "head", "head_bias"];

impl GcnParams {
    /// Glorot-uniform initialization; head bias starts at zero.
    pub fn init(config: &GcnConfig, rng: &mut SeededRng) -> Self {
        let (p, h, r) = (config.input_window, config.hidden_dim, config.embed_dim);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let v = (0..rows * cols).map(|_| rng.uniform(-limit, limit)).collect();
            Matrix::from_vec(rows, cols, v).expect("finite init")
        };
        Self {
            w1: glorot(p, h),
            b1: glorot(p, h),
            w2: glorot(h, r),
            b2: glorot(h, r),
            head: glorot(r, 1),
            head_bias: Matrix::zeros(1, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            w1: z(&self.w1),
            b1: z(&self.b1),
            w2: z(&self.w2),
            b2: z(&self.b2),
            head: z(&self.head),
            head_bias: z(&self.head_bias),
        }
    }

    pub fn tensors(&self) -> [&Matrix; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.head, &self.head_bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.head,
            &mut self.head_bias,
        ]
    }

    fn check_shapes(&self, config: &GcnConfig) -> Result<()> {
        let (p, h, r) = (config.input_window, config.hidden_dim, config.embed_dim);
        let expected = [(p, h), (p, h), (h, r), (h, r), (r, 1), (1, 1)];
        for ((name, t), shape) in PARAM_NAMES.iter().zip(self.tensors()).zip(expected) {
            if t.shape() != shape {
                return Err(Error::invalid(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Row-normalized neighbour aggregation over one graph, applied blockwise to
/// stacked samples of `n` stations each.
///
/// Row `i` is `scale_i · Σ_j w_ij h_j`. For the plain mean all `w_ij` are 1,
/// so the sum is exact under neighbour reordering for up to two neighbours.
#[derive(Debug, Clone)]
pub struct Aggregator {
    n: usize,
    rows: Vec<(f64, Vec<(usize, f64)>)>,
}

impl Aggregator {
    pub fn new(network: &StationNetwork, weighted: bool) -> Self {
        let a = network.adjacency();
        let rows = (0..network.len())
            .map(|i| {
                let nb = network.neighbors(i);
                if weighted {
                    let total: f64 = nb.iter().map(|&j| a[(i, j)]).sum();
                    (1.0, nb.iter().map(|&j| (j, a[(i, j)] / total)).collect())
                } else {
                    let scale = if nb.is_empty() { 0.0 } else { 1.0 / nb.len() as f64 };
                    (scale, nb.iter().map(|&j| (j, 1.0)).collect())
                }
            })
            .collect();
        Self {
            n: network.len(),
            rows,
        }
    }

    /// Neighbour mean of every row; isolated nodes get the zero vector.
    pub fn apply(&self, h: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(h.rows(), h.cols());
        for block in 0..h.rows() / self.n.max(1) {
            let base = block * self.n;
            for (i, (scale, nb)) in self.rows.iter().enumerate() {
                let dst = out.row_mut(base + i);
                for &(j, w) in nb {
                    for (o, v) in dst.iter_mut().zip(h.row(base + j)) {
                        *o += w * v;
                    }
                }
                dst.iter_mut().for_each(|o| *o *= scale);
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply).
    pub fn apply_transpose(&self, g: &Matrix) -> Matrix {
        let d = g.cols();
        let mut out = Matrix::zeros(g.rows(), d);
        for block in 0..g.rows() / self.n.max(1) {
            let base = block * self.n;
            for (i, (scale, nb)) in self.rows.iter().enumerate() {
                for &(j, w) in nb {
                    for k in 0..d {
                        let gi = g[(base + i, k)];
                        out[(base + j, k)] += scale * w * gi;
                    }
                }
            }
        }
        out
    }
}

/// Stacked standardized windows and next-day targets for full-batch training.
///
/// Row `s·N + i` holds station `i`'s window for sample `s`.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub inputs: Matrix,
    pub targets: Vec<f64>,
    pub stations: usize,
}

impl TrainingBatch {
    /// All `(window, next value)` pairs of a `T×N` panel, scaled per station.
    pub fn from_panel(values: &Matrix, window: usize, scaler: &Standardizer) -> Result<Self> {
        let (t_len, n) = values.shape();
        if t_len < window + 1 {
            return Err(Error::invalid(format!(
                "need at least {} days of history for window {window}, got {t_len}",
                window + 1
            )));
        }
        let samples = t_len - window;
        let mut inputs = Matrix::zeros(samples * n, window);
        let mut targets = Vec::with_capacity(samples * n);
        for s in 0..samples {
            let t = s + window;
            for i in 0..n {
                let row = inputs.row_mut(s * n + i);
                for (k, slot) in row.iter_mut().enumerate() {
                    *slot = scaler.apply_one(i, values[(t - window + k, i)]);
                }
                targets.push(scaler.apply_one(i, values[(t, i)]));
            }
        }
        Ok(Self {
            inputs,
            targets,
            stations: n,
        })
    }

    pub fn samples(&self) -> usize {
        self.inputs.rows() / self.stations.max(1)
    }
}

struct ForwardCache {
    agg_x: Matrix,
    pre1: Matrix,
    h1: Matrix,
    agg_h1: Matrix,
    z: Matrix,
}

fn forward_stacked(
    params: &GcnParams,
    agg: &Aggregator,
    x: &Matrix,
    dropout: Option<&Matrix>,
) -> ForwardCache {
    let rows = x.rows();
    let agg_x = agg.apply(x);
    let mut pre1 = Matrix::zeros(rows, params.w1.cols());
    gemm(1.0, &agg_x, false, &params.w1, false, 0.0, &mut pre1);
    gemm(1.0, x, false, &params.b1, false, 1.0, &mut pre1);
    let mut h1 = pre1.clone();
    h1.map_inplace(|v| v.max(0.0));
    if let Some(mask) = dropout {
        for (h, m) in h1.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *h *= m;
        }
    }
    let agg_h1 = agg.apply(&h1);
    let mut z = Matrix::zeros(rows, params.w2.cols());
    gemm(1.0, &agg_h1, false, &params.w2, false, 0.0, &mut z);
    gemm(1.0, &h1, false, &params.b2, false, 1.0, &mut z);
    ForwardCache {
        agg_x,
        pre1,
        h1,
        agg_h1,
        z,
    }
}

fn readout(params: &GcnParams, z: &Matrix) -> Vec<f64> {
    let bias = params.head_bias[(0, 0)];
    let head = params.head.as_slice();
    (0..z.rows())
        .map(|i| z.row(i).iter().zip(head).map(|(a, b)| a * b).sum::<f64>() + bias)
        .collect()
}

/// Mean squared readout error and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    params: &GcnParams,
    agg: &Aggregator,
    batch: &TrainingBatch,
    dropout: Option<&Matrix>,
) -> (f64, GcnParams) {
    let x = &batch.inputs;
    let cache = forward_stacked(params, agg, x, dropout);
    let yhat = readout(params, &cache.z);
    let m = yhat.len() as f64;
    let mut loss = 0.0;
    let mut dy = Matrix::zeros(yhat.len(), 1);
    for (k, (p, t)) in yhat.iter().zip(&batch.targets).enumerate() {
        let e = p - t;
        loss += e * e;
        dy[(k, 0)] = 2.0 * e / m;
    }
    loss /= m;

    let mut grads = params.zeros_like();
    gemm(1.0, &cache.z, true, &dy, false, 0.0, &mut grads.head);
    grads.head_bias[(0, 0)] = dy.as_slice().iter().sum();

    let mut dz = Matrix::zeros(cache.z.rows(), cache.z.cols());
    gemm(1.0, &dy, false, &params.head, true, 0.0, &mut dz);
    gemm(1.0, &cache.agg_h1, true, &dz, false, 0.0, &mut grads.w2);
    gemm(1.0, &cache.h1, true, &dz, false, 0.0, &mut grads.b2);

    let mut d_agg_h1 = Matrix::zeros(cache.h1.rows(), cache.h1.cols());
    gemm(1.0, &dz, false, &params.w2, true, 0.0, &mut d_agg_h1);
    let mut dh1 = agg.apply_transpose(&d_agg_h1);
    gemm(1.0, &dz, false, &params.b2, true, 1.0, &mut dh1);

    let mut dpre1 = dh1;
    for (k, g) in dpre1.as_mut_slice().iter_mut().enumerate() {
        let keep = dropout.map_or(1.0, |mask| mask.as_slice()[k]);
        *g = if cache.pre1.as_slice()[k] > 0.0 { *g * keep } else { 0.0 };
    }
    gemm(1.0, &cache.agg_x, true, &dpre1, false, 0.0, &mut grads.w1);
    gemm(1.0, x, true, &dpre1, false, 0.0, &mut grads.b1);
    (loss, grads)
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut SeededRng) -> Matrix {
    let scale = 1.0 / (1.0 - rate);
    let v = (0..rows * cols)
        .map(|_| if rng.bernoulli(rate) { 0.0 } else { scale })
        .collect();
    Matrix::from_vec(rows, cols, v).expect("finite mask")
}

/// Per-station spatial embeddings, one row per station in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub values: Matrix,
    /// Index of the last day in the source window, when known.
    pub window_end: Option<usize>,
}

impl EmbeddingSet {
    pub fn station(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub embeddings: EmbeddingSet,
    /// Standardized next-day predictions, present in training mode.
    pub readout: Option<Vec<f64>>,
}

/// Trained encoder plus the per-station scaling applied to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    config: GcnConfig,
    params: GcnParams,
    station_scaler: Standardizer,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    seed: u64,
    config: GcnConfig,
    station_scaler: Standardizer,
    params: GcnParams,
}

impl GcnModel {
    pub fn from_parts(config: GcnConfig, params: GcnParams, station_scaler: Standardizer) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self {
            config,
            params,
            station_scaler,
        })
    }

    /// Freshly initialized model with an identity input scaling.
    pub fn initialized(config: GcnConfig, stations: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed).split(0);
        let params = GcnParams::init(&config, &mut rng);
        Ok(Self {
            config,
            params,
            station_scaler: Standardizer::identity(stations),
        })
    }

    pub fn config(&self) -> &GcnConfig {
        &self.config
    }

    pub fn params(&self) -> &GcnParams {
        &self.params
    }

    pub fn station_scaler(&self) -> &Standardizer {
        &self.station_scaler
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn input_window(&self) -> usize {
        self.config.input_window
    }

    fn check_windows(&self, windows: &Matrix, network: &StationNetwork) -> Result<()> {
        let n = network.len();
        if windows.cols() != self.config.input_window || windows.rows() % n.max(1) != 0 || windows.rows() == 0 {
            return Err(Error::invalid(format!(
                "windows must be (k·{n})x{}, got {:?}",
                self.config.input_window,
                windows.shape()
            )));
        }
        if self.station_scaler.dim() != n {
            return Err(Error::invalid(format!(
                "model was fitted on {} stations, network has {n}",
                self.station_scaler.dim()
            )));
        }
        Ok(())
    }

    fn scaled(&self, windows: &Matrix) -> Matrix {
        let n = self.station_scaler.dim();
        let mut x = windows.clone();
        for r in 0..x.rows() {
            let i = r % n;
            for v in x.row_mut(r) {
                *v = self.station_scaler.apply_one(i, *v);
            }
        }
        x
    }

    /// One forward pass over an `N×p` window matrix of raw values (row `i` is
    /// station `i`'s most recent `p` days, oldest first).
    pub fn forward(
        &self,
        windows: &Matrix,
        network: &StationNetwork,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<ForwardOutput> {
        self.check_windows(windows, network)?;
        let agg = Aggregator::new(network, self.config.weighted_mean);
        let x = self.scaled(windows);
        let mask = (training && self.config.dropout_rate > 0.0)
            .then(|| dropout_mask(x.rows(), self.config.hidden_dim, self.config.dropout_rate, rng));
        let cache = forward_stacked(&self.params, &agg, &x, mask.as_ref());
        let readout = training.then(|| readout(&self.params, &cache.z));
        Ok(ForwardOutput {
            embeddings: EmbeddingSet {
                values: cache.z,
                window_end: None,
            },
            readout,
        })
    }

    /// Inference-mode embeddings (no dropout, readout unused).
    pub fn embed(&self, windows: &Matrix, network: &StationNetwork) -> Result<EmbeddingSet> {
        self.check_windows(windows, network)?;
        let agg = Aggregator::new(network, self.config.weighted_mean);
        let cache = forward_stacked(&self.params, &agg, &self.scaled(windows), None);
        Ok(EmbeddingSet {
            values: cache.z,
            window_end: None,
        })
    }

    /// Embeddings for many stacked `N×p` window blocks at once.
    pub fn embed_stacked(&self, windows: &Matrix, network: &StationNetwork) -> Result<Matrix> {
        Ok(self.embed(windows, network)?.values)
    }

    /// Full-batch MSE of the readout on a panel, without dropout.
    pub fn evaluate_loss(&self, values: &Matrix, network: &StationNetwork) -> Result<f64> {
        let batch = TrainingBatch::from_panel(values, self.config.input_window, &self.station_scaler)?;
        let agg = Aggregator::new(network, self.config.weighted_mean);
        Ok(loss_and_gradients(&self.params, &agg, &batch, None).0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: self.config.seed,
            config: self.config.clone(),
            station_scaler: self.station_scaler.clone(),
            params: self.params.clone(),
        };
        crate::io::write_json(path, &ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = crate::io::read_json(path)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ckpt.format,
                ckpt.version
            )));
        }
        Self::from_parts(ckpt.config, ckpt.params, ckpt.station_scaler)
    }
}

/// Trains on every `(window, next day)` pair of a `T×N` panel of raw values.
pub fn train(values: &Matrix, network: &StationNetwork, config: &GcnConfig) -> Result<GcnModel> {
    Ok(train_with_history(values, network, config)?.0)
}

/// Like [`train`], also returning the training-mode loss before each epoch's update.
pub fn train_with_history(
    values: &Matrix,
    network: &StationNetwork,
    config: &GcnConfig,
) -> Result<(GcnModel, Vec<f64>)> {
    config.validate()?;
    if values.cols() != network.len() {
        return Err(Error::invalid(format!(
            "panel has {} stations, network has {}",
            values.cols(),
            network.len()
        )));
    }
    let scaler = Standardizer::fit_columns(values)?;
    let batch = TrainingBatch::from_panel(values, config.input_window, &scaler)?;
    let agg = Aggregator::new(network, config.weighted_mean);

    let root = SeededRng::new(config.seed);
    let mut init_rng = root.split(0);
    let mut dropout_rng = root.split(1);
    let mut params = GcnParams::init(config, &mut init_rng);

    let adam_cfg = AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let mut optimizers = params
        .tensors()
        .iter()
        .map(|t| AdamState::new(adam_cfg, t.rows(), t.cols()))
        .collect::<Result<Vec<_>>>()?;

    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mask = (config.dropout_rate > 0.0).then(|| {
            dropout_mask(batch.inputs.rows(), config.hidden_dim, config.dropout_rate, &mut dropout_rng)
        });
        let (loss, grads) = loss_and_gradients(&params, &agg, &batch, mask.as_ref());
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("GCN loss diverged: {loss}")));
        }
        history.push(loss);
        for ((p, g), opt) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(optimizers.iter_mut())
        {
            opt.step(p, g)?;
        }
    }
    let model = GcnModel {
        config: config.clone(),
        params,
        station_scaler: scaler,
    };
    Ok((model, history))
}

/// `w0·x + w1·(2L/ζ_max − I)·x`, the first-order spectral filter.
pub fn first_order_filter(x: &[f64], network: &StationNetwork, w0: f64, w1: f64) -> Result<Vec<f64>> {
    if x.len() != network.len() {
        return Err(Error::invalid("signal length must equal station count"));
    }
    let zeta = network.zeta_max();
    if !(zeta > 0.0) {
        return Err(Error::DegenerateGraph(
            "largest Laplacian eigenvalue is zero (edgeless graph)".into(),
        ));
    }
    let lx = network.laplacian().matvec(x)?;
    Ok(x.iter()
        .zip(&lx)
        .map(|(xi, li)| w0 * xi + w1 * (2.0 * li / zeta - xi))
        .collect())
}
