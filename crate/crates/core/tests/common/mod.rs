//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use gcsvr::numeric::SeededRng;

/// Solution of the ε-SVR dual from the dense QP oracle.
pub struct QpSolution {
    pub beta: Vec<f64>,
    pub bias: f64,
    /// `yᵀβ − ε‖β‖₁ − ½βᵀKβ` at `beta`.
    pub objective: f64,
    pub iterations: usize,
}

pub fn rbf_gram(x: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|u| {
            x.iter()
                .map(|v| {
                    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-gamma * d2).exp()
                })
                .collect()
        })
        .collect()
}

fn mat_vec(k: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    k.iter().map(|row| row.iter().zip(b).map(|(a, c)| a * c).sum()).collect()
}

pub fn dual_objective(k: &[Vec<f64>], y: &[f64], eps: f64, beta: &[f64]) -> f64 {
    let kb = mat_vec(k, beta);
    let quad: f64 = beta.iter().zip(&kb).map(|(b, q)| b * q).sum();
    let lin: f64 = y.iter().zip(beta).map(|(a, b)| a * b).sum();
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    lin - eps * l1 - 0.5 * quad
}

/// Euclidean projection of `(a, s)` onto `{0 ≤ a, s ≤ c, Σa − Σs = 0}`:
/// shift by `∓λ`, clip, and bisect on `λ`.
fn project(a: &mut [f64], s: &mut [f64], c: f64) {
    let g = |lam: f64, a: &[f64], s: &[f64]| -> f64 {
        a.iter().map(|v| (v - lam).clamp(0.0, c)).sum::<f64>() - s.iter().map(|v| (v + lam).clamp(0.0, c)).sum::<f64>()
    };
    let m = a.iter().chain(s.iter()).fold(0.0f64, |m, v| m.max(v.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-m, m);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid, a, s) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    for v in a.iter_mut() {
        *v = (*v - lam).clamp(0.0, c);
    }
    for v in s.iter_mut() {
        *v = (*v + lam).clamp(0.0, c);
    }
}

/// Accelerated projected gradient on the `2n`-variable form of the dual
/// (`α, α* ∈ [0, C]`, `Σα = Σα*`), with function-value restarts.
pub fn svr_dual_oracle(k: &[Vec<f64>], y: &[f64], c: f64, eps: f64) -> QpSolution {
    let n = y.len();
    // ‖[[K, −K], [−K, K]]‖ ≤ 2·max row sum of |K|
    let lip = 2.0 * k.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lip.max(1e-12);
    let f = |a: &[f64], s: &[f64]| -> f64 {
        let beta: Vec<f64> = a.iter().zip(s).map(|(p, q)| p - q).collect();
        -dual_objective(k, y, 0.0, &beta) + eps * (a.iter().sum::<f64>() + s.iter().sum::<f64>())
    };
    let mut a = vec![0.0; n];
    let mut s = vec![0.0; n];
    let (mut ya, mut ys) = (a.clone(), s.clone());
    let mut t = 1.0f64;
    let mut fx = f(&a, &s);
    let mut iterations = 0;
    let mut still = 0;
    for it in 0..200_000 {
        iterations = it + 1;
        let beta: Vec<f64> = ya.iter().zip(&ys).map(|(p, q)| p - q).collect();
        let grad: Vec<f64> = mat_vec(k, &beta).iter().zip(y).map(|(kb, yy)| kb - yy).collect();
        let mut na: Vec<f64> = ya.iter().zip(&grad).map(|(v, g)| v - step * (g + eps)).collect();
        let mut ns: Vec<f64> = ys.iter().zip(&grad).map(|(v, g)| v - step * (-g + eps)).collect();
        project(&mut na, &mut ns, c);
        let fn_new = f(&na, &ns);
        if fn_new > fx {
            // restart momentum from the last iterate
            ya = a.clone();
            ys = s.clone();
            t = 1.0;
            still += 1;
            if still > 50 {
                break;
            }
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        let change = na
            .iter()
            .zip(&a)
            .chain(ns.iter().zip(&s))
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        ya = na.iter().zip(&a).map(|(p, q)| p + mom * (p - q)).collect();
        ys = ns.iter().zip(&s).map(|(p, q)| p + mom * (p - q)).collect();
        a = na;
        s = ns;
        fx = fn_new;
        t = t_next;
        if change <= 1e-15 * c.max(1.0) {
            still += 1;
            if still > 50 {
                break;
            }
        } else {
            still = 0;
        }
    }
    let mut beta: Vec<f64> = a.iter().zip(&s).map(|(p, q)| p - q).collect();
    if let Some(polished) = polish(k, y, c, eps, &beta) {
        if dual_objective(k, y, eps, &polished) >= dual_objective(k, y, eps, &beta) - 1e-12 {
            beta = polished;
        }
    }
    let bias = kkt_bias(k, y, c, eps, &beta);
    QpSolution {
        objective: dual_objective(k, y, eps, &beta),
        beta,
        bias,
        iterations,
    }
}

/// Exact optimum on the active set suggested by `beta`: coefficients at 0
/// or ±C stay fixed, free ones solve `(Kβ)_l + b = y_l − ε·sign(β_l)` with
/// `Σβ = 0`. Returns `None` if the result leaves the box or flips a sign.
pub fn polish(k: &[Vec<f64>], y: &[f64], c: f64, eps: f64, beta: &[f64]) -> Option<Vec<f64>> {
    let tol = 1e-6 * c;
    let n = y.len();
    let mut fixed = vec![0.0; n];
    let mut free = Vec::new();
    for l in 0..n {
        if beta[l].abs() <= tol {
            fixed[l] = 0.0;
        } else if beta[l] >= c - tol {
            fixed[l] = c;
        } else if beta[l] <= -c + tol {
            fixed[l] = -c;
        } else {
            free.push(l);
        }
    }
    let m = free.len();
    if m == 0 {
        return (fixed.iter().sum::<f64>().abs() <= 1e-9).then_some(fixed);
    }
    // unknowns: β_free (m) and b
    let mut a = vec![vec![0.0; m + 2]; m + 1];
    for (r, &l) in free.iter().enumerate() {
        let fixed_part: f64 = (0..n).filter(|j| !free.contains(j)).map(|j| k[l][j] * fixed[j]).sum();
        for (cidx, &j) in free.iter().enumerate() {
            a[r][cidx] = k[l][j];
        }
        a[r][m] = 1.0;
        a[r][m + 1] = y[l] - eps * beta[l].signum() - fixed_part;
    }
    for cidx in 0..m {
        a[m][cidx] = 1.0;
    }
    a[m][m + 1] = -fixed.iter().sum::<f64>();
    let x = solve_dense(a)?;
    let mut out = fixed;
    for (r, &l) in free.iter().enumerate() {
        let v = x[r];
        if v.signum() != beta[l].signum() || v.abs() > c {
            return None;
        }
        out[l] = v;
    }
    Some(out)
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for k in col..=n {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// Bias from the KKT conditions: mean over free coefficients, otherwise the
/// midpoint of the feasible interval.
pub fn kkt_bias(k: &[Vec<f64>], y: &[f64], c: f64, eps: f64, beta: &[f64]) -> f64 {
    let kb = mat_vec(k, beta);
    let tol = 1e-7 * c;
    let mut free = Vec::new();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for l in 0..y.len() {
        let r = y[l] - kb[l];
        let b = beta[l];
        if b.abs() <= tol {
            lo = lo.max(r - eps);
            hi = hi.min(r + eps);
        } else if b >= c - tol {
            hi = hi.min(r - eps);
        } else if b <= -c + tol {
            lo = lo.max(r + eps);
        } else {
            free.push(r - eps * b.signum());
        }
    }
    if free.is_empty() {
        0.5 * (lo + hi)
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    }
}

pub fn expansion(x: &[Vec<f64>], beta: &[f64], bias: f64, gamma: f64, z: &[f64]) -> f64 {
    x.iter()
        .zip(beta)
        .map(|(u, b)| {
            let d2: f64 = u.iter().zip(z).map(|(p, q)| (p - q) * (p - q)).sum();
            b * (-gamma * d2).exp()
        })
        .sum::<f64>()
        + bias
}

/// Great-circle distance through the chord between unit vectors.
pub fn chord_distance_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64, radius: f64) -> f64 {
    let v = |lat: f64, lon: f64| {
        let (p, l) = (lat.to_radians(), lon.to_radians());
        [p.cos() * l.cos(), p.cos() * l.sin(), p.sin()]
    };
    let (a, b) = (v(lat1, lon1), v(lat2, lon2));
    let chord = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    2.0 * radius * (chord / 2.0).min(1.0).asin()
}

/// Gaussian CRPS by adaptive Simpson integration of `∫(F(x) − 1{x ≥ X})² dx`.
pub fn crps_quadrature(mu: f64, sigma: f64, x: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::new(mu, sigma).unwrap();
    let lower = |t: f64| n.cdf(t).powi(2);
    let upper = |t: f64| (1.0 - n.cdf(t)).powi(2);
    let span = 12.0 * sigma;
    adaptive_simpson(&lower, mu.min(x) - span, x, 1e-10) + adaptive_simpson(&upper, x, mu.max(x) + span, 1e-10)
}

pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
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
    if b <= a {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

pub fn random_rows(rng: &mut SeededRng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()
}
