//! Multiple comparisons with the best: mean ranks across tasks against a
//! studentized-range critical distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Upper 5% points of the studentized range with infinite degrees of
/// freedom, for 2..=20 groups.
const Q_05: [f64; 19] = [
    2.771808, 3.314493, 3.63316, 3.857656, 4.030092, 4.169554, 4.286309, 4.386509, 4.474124, 4.551864,
    4.621655, 4.68492, 4.742732, 4.795924, 4.845154, 4.890951, 4.933745, 4.973892, 5.011689,
];

/// Upper 1% points, same layout.
const Q_01: [f64; 19] = [
    3.642773, 4.120303, 4.402801, 4.602821, 4.757047, 4.882166, 4.987183, 5.077506, 5.156635, 5.226963,
    5.290196, 5.347592, 5.400105, 5.448476, 5.493291, 5.53502, 5.574047, 5.61069, 5.645215,
];

pub const MIN_MODELS: usize = 2;
pub const MAX_MODELS: usize = 20;

/// Studentized-range critical value for `models` groups.
pub fn studentized_range_q(models: usize, theta: f64) -> Result<f64> {
    if !(MIN_MODELS..=MAX_MODELS).contains(&models) {
        return Err(Error::invalid(format!(
            "critical values are tabulated for {MIN_MODELS} to {MAX_MODELS} models, got {models}"
        )));
    }
    let table = if theta == 0.05 {
        &Q_05
    } else if theta == 0.01 {
        &Q_01
    } else {
        return Err(Error::invalid(format!("significance level must be 0.05 or 0.01, got {theta}")));
    };
    Ok(table[models - MIN_MODELS])
}

/// `q / √2`.
pub fn delta(models: usize, theta: f64) -> Result<f64> {
    Ok(studentized_range_q(models, theta)? / std::f64::consts::SQRT_2)
}

pub fn critical_distance(models: usize, tasks: usize, theta: f64) -> Result<f64> {
    if tasks == 0 {
        return Err(Error::invalid("need at least one task"));
    }
    let f = models as f64;
    Ok(delta(models, theta)? * (f * (f + 1.0) / (6.0 * tasks as f64)).sqrt())
}

/// Ranks with ties sharing the average of the positions they cover.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && values[order[end]] == values[order[k]] {
            end += 1;
        }
        let avg = (k + 1 + end) as f64 / 2.0;
        for &idx in &order[k..end] {
            ranks[idx] = avg;
        }
        k = end;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McbResult {
    pub models: Vec<String>,
    pub mean_ranks: Vec<f64>,
    pub critical_distance: f64,
    pub best: usize,
    pub significantly_worse: Vec<bool>,
    pub theta: f64,
    pub tasks: usize,
}

/// `scores` is `D×F`: one row per task, one column per model, lower is better.
pub fn mcb_test(scores: &Matrix, models: &[String], theta: f64) -> Result<McbResult> {
    let (d, f) = scores.shape();
    if d < 2 || f < 2 {
        return Err(Error::invalid(format!("MCB needs at least 2 tasks and 2 models, got {d}x{f}")));
    }
    if models.len() != f {
        return Err(Error::invalid(format!("{} model names for {f} columns", models.len())));
    }
    if !scores.all_finite() {
        return Err(Error::invalid("scores must be finite"));
    }
    let cd = critical_distance(f, d, theta)?;
    let mut sums = vec![0.0; f];
    for t in 0..d {
        for (s, r) in sums.iter_mut().zip(average_ranks(scores.row(t))) {
            *s += r;
        }
    }
    let mean_ranks: Vec<f64> = sums.iter().map(|s| s / d as f64).collect();
    let best = (0..f)
        .min_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b]).then(a.cmp(&b)))
        .expect("at least two models");
    let significantly_worse = mean_ranks.iter().map(|r| r - mean_ranks[best] > cd).collect();
    Ok(McbResult {
        models: models.to_vec(),
        mean_ranks,
        critical_distance: cd,
        best,
        significantly_worse,
        theta,
        tasks: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};

    fn names(f: usize) -> Vec<String> {
        (0..f).map(|j| format!("m{j}")).collect()
    }

    /// P(range of k standard normals ≤ q) by composite Simpson integration.
    fn range_cdf(q: f64, k: usize) -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        let (a, b, steps) = (-9.0, 9.0, 4000);
        let h = (b - a) / steps as f64;
        let g = |z: f64| k as f64 * n.pdf(z) * (n.cdf(z) - n.cdf(z - q)).powi(k as i32 - 1);
        let mut s = g(a) + g(b);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn table_matches_range_distribution() {
        for k in 2..=20 {
            let p05 = range_cdf(studentized_range_q(k, 0.05).unwrap(), k);
            let p01 = range_cdf(studentized_range_q(k, 0.01).unwrap(), k);
            assert!((p05 - 0.95).abs() < 2e-6, "k={k}: {p05}");
            assert!((p01 - 0.99).abs() < 2e-6, "k={k}: {p01}");
        }
    }

    #[test]
    fn identical_rows_give_ordered_ranks() {
        let s = Matrix::from_rows(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]).unwrap();
        let r = mcb_test(&s, &names(3), 0.05).unwrap();
        assert_eq!(r.mean_ranks, vec![1.0, 2.0, 3.0]);
        assert_eq!(r.best, 0);
    }

    #[test]
    fn ties_share_average_rank() {
        let s = Matrix::filled(4, 5, 0.3);
        let r = mcb_test(&s, &names(5), 0.05).unwrap();
        assert!(r.mean_ranks.iter().all(|&m| m == 3.0));
        assert!(r.significantly_worse.iter().all(|&w| !w));
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0, 5.0]), vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn critical_distance_formula() {
        let q = 4.474124;
        let expect = q / 2f64.sqrt() * (10.0 * 11.0 / 72.0f64).sqrt();
        assert!((critical_distance(10, 12, 0.05).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn dominant_model_flags_worst() {
        let mut rng = SeededRng::new(3);
        let mut s = Matrix::zeros(12, 10);
        for t in 0..12 {
            for j in 0..10 {
                s[(t, j)] = if j == 4 { 0.0 } else { 1.0 + j as f64 + 0.01 * rng.uniform01() };
            }
        }
        let r = mcb_test(&s, &names(10), 0.05).unwrap();
        assert_eq!(r.best, 4);
        assert_eq!(r.mean_ranks[4], 1.0);
        assert!(r.significantly_worse[9]);
        assert!(!r.significantly_worse[4]);
        let total: f64 = r.mean_ranks.iter().sum();
        assert!((total - 55.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_inputs() {
        let s = Matrix::filled(3, 21, 1.0);
        assert!(mcb_test(&s, &names(21), 0.05).is_err());
        let s = Matrix::filled(3, 3, 1.0);
        assert!(mcb_test(&s, &names(3), 0.1).is_err());
        assert!(mcb_test(&Matrix::filled(1, 3, 1.0), &names(3), 0.05).is_err());
    }
}
