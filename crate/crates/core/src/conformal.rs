//! Rolling-calibration normalized conformal prediction intervals.

use std::collections::VecDeque;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::GcsvrModel;
use crate::panel::PanelSeries;

pub const SCALER_FLOOR: f64 = 1e-6;
pub const MIN_UPSILON: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalerKind {
    /// `U ≡ 1`: plain absolute-residual scores.
    Constant,
    /// Mean absolute error over the calibration window.
    RollingMae,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    pub rho: f64,
    pub upsilon: usize,
    pub scaler: ScalerKind,
    /// Use the `⌈(1−ρ)(n+1)⌉`-th order statistic instead of the plain infimum.
    pub finite_sample: bool,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            upsilon: 60,
            scaler: ScalerKind::RollingMae,
            finite_sample: false,
        }
    }
}

impl ConformalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("rho must be in (0, 1), got {}", self.rho)));
        }
        if self.upsilon < MIN_UPSILON {
            return Err(Error::invalid(format!(
                "calibration window must hold at least {MIN_UPSILON} points, got {}",
                self.upsilon
            )));
        }
        Ok(())
    }
}

pub fn conformity_score(actual: f64, forecast: f64, scaler: f64) -> Result<f64> {
    if !(scaler > 0.0) {
        return Err(Error::invalid(format!("scaler must be positive, got {scaler}")));
    }
    Ok((actual - forecast).abs() / scaler)
}

fn order_statistic_rank(n: usize, rho: f64, finite_sample: bool) -> usize {
    let m = if finite_sample { n + 1 } else { n } as f64;
    // guard against products like 0.9 * 10 landing a hair above an integer
    let k = ((1.0 - rho) * m - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// Smallest score `ω` with at least a `1−ρ` fraction of scores `≤ ω`.
pub fn conformal_quantile(scores: &[f64], rho: f64) -> Result<f64> {
    conformal_quantile_with(scores, rho, false)
}

pub fn conformal_quantile_with(scores: &[f64], rho: f64, finite_sample: bool) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InsufficientCalibration("no conformity scores in the window".into()));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("rho must be in (0, 1), got {rho}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_statistic_rank(scores.len(), rho, finite_sample) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    pub kappa: f64,
}

impl PredictionInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// `[forecast − κU, forecast + κU]`.
pub fn interval(forecast: f64, kappa: f64, scaler: f64) -> PredictionInterval {
    let half = kappa * scaler;
    PredictionInterval {
        lower: forecast - half,
        upper: forecast + half,
        center: forecast,
        kappa,
    }
}

/// Calibration state of one station: a FIFO window of recent
/// (absolute error, scaler at the time) pairs.
#[derive(Debug, Clone)]
pub struct ConformalStream {
    config: ConformalConfig,
    window: VecDeque<(f64, f64)>,
}

impl ConformalStream {
    pub fn new(config: ConformalConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            window: VecDeque::with_capacity(config.upsilon + 1),
        })
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Scaler for the next point, from the errors currently in the window.
    pub fn scaler(&self) -> f64 {
        match self.config.scaler {
            ScalerKind::Constant => 1.0,
            ScalerKind::RollingMae => {
                if self.window.is_empty() {
                    return SCALER_FLOOR;
                }
                let mae = self.window.iter().map(|(e, _)| e).sum::<f64>() / self.window.len() as f64;
                mae.max(SCALER_FLOOR)
            }
        }
    }

    /// Seeds the window with calibration errors. Every seed point is scored
    /// against the scaler of the full seed window.
    pub fn warm_up(&mut self, abs_errors: &[f64]) -> Result<()> {
        if abs_errors.is_empty() {
            return Err(Error::InsufficientCalibration("empty calibration set".into()));
        }
        let take = &abs_errors[abs_errors.len().saturating_sub(self.config.upsilon)..];
        self.window.clear();
        for &e in take {
            self.window.push_back((e, 1.0));
        }
        let u = self.scaler();
        for entry in self.window.iter_mut() {
            entry.1 = u;
        }
        Ok(())
    }

    pub fn scores(&self) -> Vec<f64> {
        self.window.iter().map(|(e, u)| e / u).collect()
    }

    pub fn kappa(&self) -> Result<f64> {
        conformal_quantile_with(&self.scores(), self.config.rho, self.config.finite_sample)
    }

    pub fn interval(&self, forecast: f64) -> Result<PredictionInterval> {
        Ok(interval(forecast, self.kappa()?, self.scaler()))
    }

    /// Scores the new observation with the current scaler, then slides the window.
    pub fn update(&mut self, actual: f64, forecast: f64) {
        let u = self.scaler();
        self.window.push_back(((actual - forecast).abs(), u));
        while self.window.len() > self.config.upsilon {
            self.window.pop_front();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub date: NaiveDate,
    pub station_id: String,
    pub forecast: f64,
    pub lower: f64,
    pub upper: f64,
    pub actual: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationCoverage {
    pub station_id: String,
    pub coverage: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub stations: Vec<StationCoverage>,
    pub pooled: f64,
    pub points: usize,
    pub config: ConformalConfig,
}

impl CoverageReport {
    pub fn from_records(records: &[IntervalRecord], station_ids: &[String], config: ConformalConfig) -> Self {
        let stations = station_ids
            .iter()
            .map(|id| {
                let mine: Vec<&IntervalRecord> = records.iter().filter(|r| &r.station_id == id).collect();
                let n = mine.len().max(1) as f64;
                StationCoverage {
                    station_id: id.clone(),
                    coverage: mine.iter().filter(|r| r.covered).count() as f64 / n,
                    mean_width: mine.iter().map(|r| r.upper - r.lower).sum::<f64>() / n,
                }
            })
            .collect();
        let covered = records.iter().filter(|r| r.covered).count();
        Self {
            stations,
            pooled: covered as f64 / records.len().max(1) as f64,
            points: records.len(),
            config,
        }
    }
}

/// Streams one-step intervals over days `test_start..test_end` of `panel`.
///
/// The `upsilon` days before `test_start` calibrate each station; `model`
/// should not have been trained on them.
pub fn run_conformal(
    model: &GcsvrModel,
    panel: &PanelSeries,
    test_start: usize,
    test_end: usize,
    config: &ConformalConfig,
) -> Result<(Vec<IntervalRecord>, CoverageReport)> {
    config.validate()?;
    let p = model.input_window();
    if test_start < config.upsilon + p {
        return Err(Error::InsufficientCalibration(format!(
            "test start at day {test_start} leaves fewer than {} calibration days after a {p}-day window",
            config.upsilon
        )));
    }
    if test_end > panel.len() || test_end <= test_start {
        return Err(Error::invalid(format!("test range {test_start}..{test_end} outside panel")));
    }
    let cal_start = test_start - config.upsilon;
    let values = panel.values();
    let preds = model.one_step_forecasts(values, cal_start, test_end)?;
    let ids = panel.station_ids();
    let mut streams = Vec::with_capacity(ids.len());
    for i in 0..ids.len() {
        let errs: Vec<f64> = (cal_start..test_start)
            .map(|t| (values[(t, i)] - preds[(t - cal_start, i)]).abs())
            .collect();
        let mut s = ConformalStream::new(*config)?;
        s.warm_up(&errs)?;
        streams.push(s);
    }
    let mut records = Vec::with_capacity((test_end - test_start) * ids.len());
    for t in test_start..test_end {
        for (i, stream) in streams.iter_mut().enumerate() {
            let f = preds[(t - cal_start, i)];
            let iv = stream.interval(f)?;
            let actual = values[(t, i)];
            records.push(IntervalRecord {
                date: panel.date(t),
                station_id: ids[i].clone(),
                forecast: f,
                lower: iv.lower,
                upper: iv.upper,
                actual,
                covered: iv.contains(actual),
            });
            stream.update(actual, f);
        }
    }
    let report = CoverageReport::from_records(&records, ids, *config);
    Ok((records, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;

    #[test]
    fn scores() {
        assert_eq!(conformity_score(3.0, 3.0, 1.0).unwrap(), 0.0);
        assert_eq!(conformity_score(6.0, 2.0, 2.0).unwrap(), 2.0);
        let mut rng = SeededRng::new(1);
        for _ in 0..50 {
            let (a, f) = (rng.normal(), rng.normal());
            assert_eq!(conformity_score(a, f, 1.0).unwrap(), (a - f).abs());
        }
        assert!(conformity_score(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn quantile_cases() {
        assert_eq!(conformal_quantile(&[0.7; 8], 0.1).unwrap(), 0.7);
        assert_eq!(conformal_quantile(&[0.7; 8], 0.6).unwrap(), 0.7);
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(conformal_quantile(&s, 0.1).unwrap(), 9.0);
        assert_eq!(conformal_quantile_with(&s, 0.1, true).unwrap(), 10.0);
        assert!(matches!(conformal_quantile(&[], 0.1), Err(Error::InsufficientCalibration(_))));
    }

    #[test]
    fn quantile_matches_sort_oracle() {
        let mut rng = SeededRng::new(7);
        for _ in 0..200 {
            let n = 1 + rng.index(80);
            let rho = rng.uniform(0.01, 0.99);
            let s: Vec<f64> = (0..n).map(|_| rng.normal().abs()).collect();
            let mut sorted = s.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // smallest candidate whose empirical CDF reaches 1 − rho
            let oracle = *sorted
                .iter()
                .find(|&&w| s.iter().filter(|&&x| x <= w).count() as f64 / n as f64 >= 1.0 - rho - 1e-12)
                .unwrap();
            assert_eq!(conformal_quantile(&s, rho).unwrap(), oracle);
        }
    }

    #[test]
    fn kappa_monotone_in_coverage_level() {
        let mut rng = SeededRng::new(8);
        let s: Vec<f64> = (0..40).map(|_| rng.normal().abs()).collect();
        let mut prev = 0.0;
        for k in 1..20 {
            let rho = 1.0 - k as f64 / 20.0;
            let q = conformal_quantile(&s, rho).unwrap();
            assert!(q >= prev);
            prev = q;
        }
        let mut bigger = s.clone();
        bigger.push(conformal_quantile(&s, 0.1).unwrap() + 1.0);
        assert!(conformal_quantile(&bigger, 0.1).unwrap() >= conformal_quantile(&s, 0.1).unwrap());
    }

    #[test]
    fn interval_cases() {
        let iv = interval(5.0, 0.0, 2.0);
        assert_eq!((iv.lower, iv.upper), (5.0, 5.0));
        let iv = interval(50.0, 2.0, 3.0);
        assert_eq!((iv.lower, iv.upper), (44.0, 56.0));
        assert!(iv.contains(50.0));
        let mut rng = SeededRng::new(9);
        for _ in 0..100 {
            let (k, u) = (rng.uniform(0.0, 3.0), rng.uniform(0.1, 3.0));
            let w = interval(0.0, k, u).width();
            assert!(interval(0.0, k + 0.1, u).width() > w);
            assert!(interval(0.0, k + 0.1, u + 0.1).width() > interval(0.0, k + 0.1, u).width());
        }
    }

    #[test]
    fn stream_window_is_fifo() {
        let cfg = ConformalConfig {
            upsilon: 5,
            scaler: ScalerKind::Constant,
            ..ConformalConfig::default()
        };
        let mut s = ConformalStream::new(cfg).unwrap();
        assert!(s.interval(1.0).is_err());
        s.warm_up(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(s.scores(), vec![2.0, 3.0, 4.0, 5.0, 6.0]);
        s.update(10.0, 0.0);
        assert_eq!(s.scores(), vec![3.0, 4.0, 5.0, 6.0, 10.0]);
        assert!(ConformalStream::new(ConformalConfig { upsilon: 4, ..cfg }).is_err());
    }

    #[test]
    fn gaussian_stream_coverage() {
        let cfg = ConformalConfig::default();
        let mut rng = SeededRng::new(100);
        let mut s = ConformalStream::new(cfg).unwrap();
        let warm: Vec<f64> = (0..60).map(|_| rng.normal().abs()).collect();
        s.warm_up(&warm).unwrap();
        let mut hit = 0;
        for _ in 0..5000 {
            let y = rng.normal();
            if s.interval(0.0).unwrap().contains(y) {
                hit += 1;
            }
            s.update(y, 0.0);
        }
        let cov = hit as f64 / 5000.0;
        assert!((0.86..=0.93).contains(&cov), "{cov}");
    }
}
