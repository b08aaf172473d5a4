//! Point and probabilistic forecast accuracy measures.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Denominator floor for MASE on a constant training series.
pub const MASE_FLOOR: f64 = 1e-12;

pub const METRIC_NAMES: [&str; 6] = ["mae", "mase", "rmse", "smape", "pinball", "crps"];

fn check_pair(actual: &[f64], forecast: &[f64]) -> Result<()> {
    if actual.len() != forecast.len() {
        return Err(Error::invalid(format!(
            "actual has {} values, forecast has {}",
            actual.len(),
            forecast.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::invalid("metrics need at least one value"));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("quantile level must be in (0, 1), got {rho}")));
    }
    Ok(())
}

pub fn mae(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_pair(actual, forecast)?;
    Ok(actual.iter().zip(forecast).map(|(a, f)| (a - f).abs()).sum::<f64>() / actual.len() as f64)
}

pub fn rmse(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_pair(actual, forecast)?;
    let mse = actual.iter().zip(forecast).map(|(a, f)| (a - f) * (a - f)).sum::<f64>() / actual.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaseValue {
    pub value: f64,
    /// Set when the in-sample naive error was zero and got floored.
    pub unreliable: bool,
}

/// Forecast MAE over the in-sample one-step naive MAE of `train`.
pub fn mase(actual: &[f64], forecast: &[f64], train: &[f64]) -> Result<MaseValue> {
    if train.len() < 2 {
        return Err(Error::invalid("MASE needs at least two training values"));
    }
    let num = mae(actual, forecast)?;
    let naive = train.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (train.len() - 1) as f64;
    let unreliable = naive < MASE_FLOOR;
    Ok(MaseValue {
        value: num / naive.max(MASE_FLOOR),
        unreliable,
    })
}

/// Symmetric percentage error in `[0, 200]`; terms with `|X| + |X̂| = 0` count as 0.
pub fn smape(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_pair(actual, forecast)?;
    let total: f64 = actual
        .iter()
        .zip(forecast)
        .map(|(a, f)| {
            let den = a.abs() + f.abs();
            if den == 0.0 {
                0.0
            } else {
                2.0 * (a - f).abs() / den
            }
        })
        .sum();
    Ok(100.0 * total / actual.len() as f64)
}

/// Pinball loss of one quantile forecast.
pub fn pinball_single(actual: f64, quantile: f64, rho: f64) -> f64 {
    let d = actual - quantile;
    (rho * d).max((rho - 1.0) * d)
}

pub fn pinball(actual: &[f64], quantiles: &[f64], rho: f64) -> Result<f64> {
    check_pair(actual, quantiles)?;
    check_rho(rho)?;
    Ok(actual.iter().zip(quantiles).map(|(&a, &q)| pinball_single(a, q, rho)).sum::<f64>() / actual.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PredictiveLaw {
    Gaussian { mean: f64, sigma: f64 },
    Empirical { samples: Vec<f64> },
}

impl PredictiveLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            PredictiveLaw::Gaussian { mean, sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) || !mean.is_finite() {
                    return Err(Error::invalid(format!("gaussian law needs finite mean and sigma > 0, got {sigma}")));
                }
            }
            PredictiveLaw::Empirical { samples } => {
                if samples.is_empty() || samples.iter().any(|s| !s.is_finite()) {
                    return Err(Error::invalid("empirical law needs at least one finite sample"));
                }
            }
        }
        Ok(())
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Continuous ranked probability score of `actual` under `law`.
pub fn crps(actual: f64, law: &PredictiveLaw) -> Result<f64> {
    law.validate()?;
    match law {
        PredictiveLaw::Gaussian { mean, sigma } => {
            let z = (actual - mean) / sigma;
            let n = std_normal();
            let pi = std::f64::consts::PI;
            Ok(sigma * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / pi.sqrt()))
        }
        PredictiveLaw::Empirical { samples } => {
            let m = samples.len() as f64;
            let first = samples.iter().map(|s| (s - actual).abs()).sum::<f64>() / m;
            let mut sorted = samples.clone();
            sorted.sort_by(f64::total_cmp);
            // Σ_{i,j} |s_i − s_j| = 2 Σ_k (2k − m + 1) s_(k)
            let pair_sum: f64 = sorted
                .iter()
                .enumerate()
                .map(|(k, s)| (2.0 * k as f64 - m + 1.0) * s)
                .sum::<f64>()
                * 2.0;
            Ok(first - 0.5 * pair_sum / (m * m))
        }
    }
}

/// Linearly interpolated order statistic (`h = (n−1)ρ`) of sorted data.
pub fn empirical_quantile(sorted: &[f64], rho: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * rho;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile_from_law(law: &PredictiveLaw, rho: f64) -> Result<f64> {
    law.validate()?;
    check_rho(rho)?;
    match law {
        PredictiveLaw::Gaussian { mean, sigma } => Ok(mean + sigma * std_normal().inverse_cdf(rho)),
        PredictiveLaw::Empirical { samples } => {
            let mut sorted = samples.clone();
            sorted.sort_by(f64::total_cmp);
            Ok(empirical_quantile(&sorted, rho))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub mae: f64,
    pub mase: f64,
    pub rmse: f64,
    pub smape: f64,
    pub pinball: f64,
    pub crps: f64,
}

impl MetricValues {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "mae" => self.mae,
            "mase" => self.mase,
            "rmse" => self.rmse,
            "smape" => self.smape,
            "pinball" => self.pinball,
            "crps" => self.crps,
            _ => return None,
        })
    }

    pub fn mean_of(items: &[MetricValues]) -> MetricValues {
        let n = items.len() as f64;
        let avg = |f: fn(&MetricValues) -> f64| items.iter().map(f).sum::<f64>() / n;
        MetricValues {
            mae: avg(|m| m.mae),
            mase: avg(|m| m.mase),
            rmse: avg(|m| m.rmse),
            smape: avg(|m| m.smape),
            pinball: avg(|m| m.pinball),
            crps: avg(|m| m.crps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMetrics {
    pub station_id: String,
    #[serde(flatten)]
    pub values: MetricValues,
    pub mase_unreliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rho: f64,
    pub stations: Vec<StationMetrics>,
    pub mean: MetricValues,
}

impl MetricReport {
    /// Scores `q×N` point forecasts against actuals. Each station's
    /// predictive law is gaussian around the point forecast with spread
    /// `sigma[i]`; `train` (`T×N`) supplies the MASE scale.
    pub fn compute(
        station_ids: &[String],
        actual: &Matrix,
        forecast: &Matrix,
        train: &Matrix,
        sigma: &[f64],
        rho: f64,
    ) -> Result<Self> {
        let n = station_ids.len();
        if actual.shape() != forecast.shape() || actual.cols() != n || train.cols() != n || sigma.len() != n {
            return Err(Error::invalid("metric inputs disagree in shape"));
        }
        check_rho(rho)?;
        let mut stations = Vec::with_capacity(n);
        for (i, id) in station_ids.iter().enumerate() {
            let a = actual.column(i);
            let f = forecast.column(i);
            let mut quantiles = Vec::with_capacity(f.len());
            let mut crps_sum = 0.0;
            for (&x, &mu) in a.iter().zip(&f) {
                let law = PredictiveLaw::Gaussian {
                    mean: mu,
                    sigma: sigma[i],
                };
                quantiles.push(quantile_from_law(&law, rho)?);
                crps_sum += crps(x, &law)?;
            }
            let m = mase(&a, &f, &train.column(i))?;
            stations.push(StationMetrics {
                station_id: id.clone(),
                values: MetricValues {
                    mae: mae(&a, &f)?,
                    mase: m.value,
                    rmse: rmse(&a, &f)?,
                    smape: smape(&a, &f)?,
                    pinball: pinball(&a, &quantiles, rho)?,
                    crps: crps_sum / a.len() as f64,
                },
                mase_unreliable: m.unreliable,
            });
        }
        let all: Vec<MetricValues> = stations.iter().map(|s| s.values).collect();
        Ok(Self {
            rho,
            mean: MetricValues::mean_of(&all),
            stations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;

    /// Adaptive Simpson quadrature.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb) = (f(a), f(b));
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    fn crps_by_quadrature(x: f64, mu: f64, sigma: f64) -> f64 {
        let n = Normal::new(mu, sigma).unwrap();
        let lo = mu.min(x) - 12.0 * sigma;
        let hi = mu.max(x) + 12.0 * sigma;
        let left = simpson(&|t| n.cdf(t).powi(2), lo, x, 1e-12);
        let right = simpson(&|t| (1.0 - n.cdf(t)).powi(2), x, hi, 1e-12);
        left + right
    }

    #[test]
    fn point_metric_hand_values() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, -3.0]).unwrap(), 3.0);
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, -3.0]).unwrap(), 3.0);
        assert_eq!(mae(&[0.0, 0.0], &[0.0, 4.0]).unwrap(), 2.0);
        assert_eq!(rmse(&[0.0, 0.0], &[0.0, 4.0]).unwrap(), 8f64.sqrt());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mase_cases() {
        let train = [1.0, 2.0, 3.0, 4.0];
        let m = mase(&[5.0, 6.0], &[7.0, 4.0], &train).unwrap();
        assert_eq!(m.value, 2.0);
        assert!(!m.unreliable);
        assert_eq!(mase(&[5.0], &[5.0], &train).unwrap().value, 0.0);
        let flat = mase(&[1.0], &[2.0], &[3.0, 3.0, 3.0]).unwrap();
        assert!(flat.unreliable);
        assert_eq!(flat.value, 1.0 / MASE_FLOOR);
    }

    #[test]
    fn naive_in_sample_mase_is_one() {
        let mut rng = SeededRng::new(2);
        let train: Vec<f64> = (0..50).map(|_| rng.normal() * 5.0).collect();
        let actual = &train[1..];
        let naive = &train[..train.len() - 1];
        let m = mase(actual, naive, &train).unwrap();
        assert!((m.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smape_cases() {
        assert!((smape(&[100.0], &[50.0]).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(smape(&[3.0, -2.0], &[3.0, -2.0]).unwrap(), 0.0);
        assert_eq!(smape(&[0.0], &[5.0]).unwrap(), 200.0);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn pinball_cases() {
        assert!((pinball(&[12.0], &[10.0], 0.8).unwrap() - 1.6).abs() < 1e-12);
        assert!((pinball(&[8.0], &[10.0], 0.8).unwrap() - 0.4).abs() < 1e-12);
        let mut rng = SeededRng::new(6);
        for _ in 0..100 {
            let (x, q) = (rng.normal(), rng.normal());
            assert_eq!(pinball_single(x, q, 0.5), 0.5 * (x - q).abs());
        }
        assert!(pinball(&[1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn pinball_complement_sums_to_absolute_error() {
        let mut rng = SeededRng::new(13);
        for _ in 0..1000 {
            let (x, q, rho) = (rng.normal() * 10.0, rng.normal() * 10.0, rng.uniform(0.01, 0.99));
            let s = pinball_single(x, q, rho) + pinball_single(x, q, 1.0 - rho);
            assert!((s - (x - q).abs()).abs() <= 1e-12);
        }
    }

    #[test]
    fn crps_gaussian_at_mean() {
        for sigma in [0.5, 1.0, 3.0] {
            let c = crps(1.0, &PredictiveLaw::Gaussian { mean: 1.0, sigma }).unwrap();
            let quad = crps_by_quadrature(1.0, 1.0, sigma);
            assert!((c - quad).abs() < 1e-6);
            assert!((c / sigma - 0.23370).abs() < 1e-5);
        }
    }

    #[test]
    fn crps_gaussian_matches_quadrature() {
        for mu in [-2.0, -0.5, 0.0, 1.0, 4.0] {
            for sigma in [0.1, 0.5, 1.0, 2.0, 5.0] {
                for x in [-3.0, -1.0, 0.0, 0.7, 6.0] {
                    let c = crps(x, &PredictiveLaw::Gaussian { mean: mu, sigma }).unwrap();
                    let q = crps_by_quadrature(x, mu, sigma);
                    assert!((c - q).abs() < 1e-6, "mu={mu} sigma={sigma} x={x}: {c} vs {q}");
                }
            }
        }
    }

    #[test]
    fn crps_empirical() {
        let law = PredictiveLaw::Empirical { samples: vec![2.5; 4] };
        assert_eq!(crps(2.5, &law).unwrap(), 0.0);
        let mut rng = SeededRng::new(21);
        let samples: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let x = 0.3;
        let m = samples.len() as f64;
        let mut pair = 0.0;
        for a in &samples {
            for b in &samples {
                pair += (a - b).abs();
            }
        }
        let oracle = samples.iter().map(|s| (s - x).abs()).sum::<f64>() / m - 0.5 * pair / (m * m);
        let got = crps(x, &PredictiveLaw::Empirical { samples }).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!(crps(0.0, &PredictiveLaw::Gaussian { mean: 0.0, sigma: 0.0 }).is_err());
    }

    #[test]
    fn quantiles() {
        let g = PredictiveLaw::Gaussian { mean: 3.0, sigma: 2.0 };
        assert!((quantile_from_law(&g, 0.5).unwrap() - 3.0).abs() < 1e-12);
        let z = quantile_from_law(&PredictiveLaw::Gaussian { mean: 0.0, sigma: 1.0 }, 0.8).unwrap();
        assert!((z - 0.84162).abs() < 1e-5);
        let e = PredictiveLaw::Empirical { samples: vec![3.0, 1.0, 2.0] };
        assert_eq!(quantile_from_law(&e, 0.5).unwrap(), 2.0);
        assert_eq!(quantile_from_law(&e, 0.75).unwrap(), 2.5);
    }

    #[test]
    fn scale_behaviour() {
        let mut rng = SeededRng::new(4);
        let a: Vec<f64> = (0..20).map(|_| 10.0 + rng.normal()).collect();
        let f: Vec<f64> = (0..20).map(|_| 10.0 + rng.normal()).collect();
        let t: Vec<f64> = (0..40).map(|_| 10.0 + rng.normal()).collect();
        let c = 3.5;
        let sc = |v: &[f64]| v.iter().map(|x| c * x).collect::<Vec<_>>();
        let (ca, cf, ct) = (sc(&a), sc(&f), sc(&t));
        assert!((mae(&ca, &cf).unwrap() - c * mae(&a, &f).unwrap()).abs() < 1e-10);
        assert!((rmse(&ca, &cf).unwrap() - c * rmse(&a, &f).unwrap()).abs() < 1e-10);
        assert!((pinball(&ca, &cf, 0.8).unwrap() - c * pinball(&a, &f, 0.8).unwrap()).abs() < 1e-10);
        assert!((mase(&ca, &cf, &ct).unwrap().value - mase(&a, &f, &t).unwrap().value).abs() < 1e-10);
        assert!((smape(&ca, &cf).unwrap() - smape(&a, &f).unwrap()).abs() < 1e-10);
        let law = PredictiveLaw::Gaussian { mean: f[0], sigma: 0.7 };
        let claw = PredictiveLaw::Gaussian { mean: cf[0], sigma: 0.7 * c };
        assert!((crps(ca[0], &claw).unwrap() - c * crps(a[0], &law).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn report_averages_stations() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let actual = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let forecast = Matrix::from_rows(&[[1.0, 3.0], [3.0, 6.0]]).unwrap();
        let train = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0]]).unwrap();
        let r = MetricReport::compute(&ids, &actual, &forecast, &train, &[1.0, 1.0], 0.8).unwrap();
        assert_eq!(r.stations[0].values.mae, 0.0);
        assert_eq!(r.stations[1].values.mae, 1.5);
        assert_eq!(r.mean.mae, 0.75);
        for name in METRIC_NAMES {
            assert!(r.mean.get(name).unwrap().is_finite());
        }
    }
}
