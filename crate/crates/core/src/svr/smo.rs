//! Sequential minimal optimization for the ε-SVR dual in signed form:
//! minimize `½βᵀKβ − yᵀβ + ε‖β‖₁` subject to `Σβ = 0`, `|β_ℓ| ≤ C`.
//!
//! Each step moves one coefficient up and another down by the same amount,
//! which preserves the equality constraint, and takes the exact minimizer of
//! the resulting one-dimensional piecewise quadratic.

use serde::{Deserialize, Serialize};

use super::kernel::KernelStore;

/// Curvature floor for non-positive-definite pairs.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoSummary {
    pub iterations: u64,
    pub max_violation: f64,
    pub converged: bool,
    /// `−½βᵀKβ − ε‖β‖₁ + yᵀβ` at the returned point.
    pub dual_objective: f64,
}

pub(crate) struct SmoProblem<'k, 'a> {
    pub kernel: &'k mut KernelStore<'a>,
    pub y: &'k [f64],
    pub c: f64,
    pub epsilon: f64,
    pub tol: f64,
    /// Stop after this many consecutive sweeps without a new lowest violation.
    pub max_stalled_sweeps: u64,
}

pub(crate) struct SmoSolution {
    pub beta: Vec<f64>,
    pub bias: f64,
    pub summary: SmoSummary,
}

#[inline]
fn up_slope(beta: f64, g: f64, eps: f64) -> f64 {
    if beta >= 0.0 {
        g + eps
    } else {
        g - eps
    }
}

#[inline]
fn down_slope(beta: f64, g: f64, eps: f64) -> f64 {
    if beta <= 0.0 {
        -g + eps
    } else {
        -g - eps
    }
}

/// Best and second-best (value, index) with ties to the lowest index.
fn two_smallest(vals: impl Iterator<Item = (usize, f64)>) -> [Option<(f64, usize)>; 2] {
    let mut best: [Option<(f64, usize)>; 2] = [None, None];
    for (i, v) in vals {
        match best[0] {
            None => best[0] = Some((v, i)),
            Some((b0, _)) if v < b0 => {
                best[1] = best[0];
                best[0] = Some((v, i));
            }
            _ => match best[1] {
                Some((b1, _)) if v >= b1 => {}
                _ => best[1] = Some((v, i)),
            },
        }
    }
    best
}

/// Most violating pair `(i, j, violation)`; `i` moves up, `j` moves down.
fn select_pair(beta: &[f64], grad: &[f64], c: f64, eps: f64) -> Option<(usize, usize, f64)> {
    let ups = two_smallest(
        (0..beta.len())
            .filter(|&l| beta[l] < c)
            .map(|l| (l, up_slope(beta[l], grad[l], eps))),
    );
    let downs = two_smallest(
        (0..beta.len())
            .filter(|&l| beta[l] > -c)
            .map(|l| (l, down_slope(beta[l], grad[l], eps))),
    );
    let (u0, d0) = (ups[0]?, downs[0]?);
    let (i, j, total) = if u0.1 != d0.1 {
        (u0.1, d0.1, u0.0 + d0.0)
    } else {
        let a = downs[1].map(|d1| (u0.1, d1.1, u0.0 + d1.0));
        let b = ups[1].map(|u1| (u1.1, d0.1, u1.0 + d0.0));
        match (a, b) {
            (Some(a), Some(b)) => {
                if a.2 < b.2 || (a.2 == b.2 && (a.0, a.1) <= (b.0, b.1)) {
                    a
                } else {
                    b
                }
            }
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => return None,
        }
    };
    Some((i, j, -total))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Minimizes `φ(t) = b·t + ½a·t² + ε(|βi + t| + |βj − t|)` on `[0, hi]`.
fn line_search(a: f64, b: f64, beta_i: f64, beta_j: f64, eps: f64, hi: f64) -> f64 {
    let mut knots = vec![0.0];
    for k in [-beta_i, beta_j] {
        if k > 0.0 && k < hi {
            knots.push(k);
        }
    }
    knots.push(hi);
    knots.sort_by(f64::total_cmp);
    for w in knots.windows(2) {
        let (lo, up) = (w[0], w[1]);
        if up <= lo {
            continue;
        }
        let mid = 0.5 * (lo + up);
        let s = eps * (sign(beta_i + mid) - sign(beta_j - mid));
        let t = ((-b - s) / a).clamp(lo, up);
        if t < up {
            return t;
        }
    }
    hi
}

/// Primal-form objective `½βᵀKβ − yᵀβ + ε‖β‖₁` from the gradient `Kβ − y`.
pub(crate) fn primal_form_objective(beta: &[f64], grad: &[f64], y: &[f64], eps: f64) -> f64 {
    let mut quad = 0.0;
    let mut lin = 0.0;
    let mut l1 = 0.0;
    for ((b, g), yy) in beta.iter().zip(grad).zip(y) {
        quad += b * (g + yy);
        lin += yy * b;
        l1 += b.abs();
    }
    0.5 * quad - lin + eps * l1
}

/// Bias from free coefficients, or the midpoint of the feasible interval.
fn compute_bias(beta: &[f64], grad: &[f64], c: f64, eps: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for (&b, &g) in beta.iter().zip(grad) {
        if b > 0.0 && b < c {
            sum += -g - eps;
            count += 1;
        } else if b < 0.0 && b > -c {
            sum += -g + eps;
            count += 1;
        }
        if b < c {
            lower = lower.max(-up_slope(b, g, eps));
        }
        if b > -c {
            upper = upper.min(down_slope(b, g, eps));
        }
    }
    if count > 0 {
        return sum / count as f64;
    }
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => 0.5 * (lower + upper),
        (true, false) => lower,
        (false, true) => upper,
        (false, false) => 0.0,
    }
}

/// Runs SMO from `β = 0`. `observer` sees `β` after every accepted step.
pub(crate) fn solve(problem: SmoProblem<'_, '_>, mut observer: Option<&mut dyn FnMut(&[f64])>) -> SmoSolution {
    let SmoProblem {
        kernel,
        y,
        c,
        epsilon: eps,
        tol,
        max_stalled_sweeps,
    } = problem;
    let n = y.len();
    let mut beta = vec![0.0; n];
    let mut grad: Vec<f64> = y.iter().map(|v| -v).collect();
    let mut iterations = 0u64;
    // a sweep is n iterations; it makes progress if it lowers the best violation seen
    let mut best = f64::INFINITY;
    let mut improved = false;
    let mut stalled = 0u64;

    let (max_violation, converged) = loop {
        let Some((i, j, violation)) = select_pair(&beta, &grad, c, eps) else {
            break (0.0, true);
        };
        if violation <= tol {
            break (violation, true);
        }
        if violation < best {
            best = violation;
            improved = true;
        }
        if iterations > 0 && iterations % n as u64 == 0 {
            stalled = if improved { 0 } else { stalled + 1 };
            improved = false;
            if stalled >= max_stalled_sweeps {
                break (violation, false);
            }
        }
        let kii = kernel.diag(i);
        let kjj = kernel.diag(j);
        let (bi, bj) = (beta[i], beta[j]);
        let hi = (c - bi).min(bj + c);
        let t = kernel.with_rows(i, j, |ri, rj| {
            let a = (kii + kjj - 2.0 * ri[j]).max(TAU);
            let t = line_search(a, grad[i] - grad[j], bi, bj, eps, hi);
            if t > 0.0 {
                for ((g, ki), kj) in grad.iter_mut().zip(ri).zip(rj) {
                    *g += t * (ki - kj);
                }
            }
            t
        });
        iterations += 1;
        if t <= 0.0 {
            // no representable progress on the most violating pair
            break (violation, false);
        }
        beta[i] = if t == c - bi { c } else { bi + t };
        beta[j] = if t == bj + c { -c } else { bj - t };
        if let Some(obs) = observer.as_deref_mut() {
            obs(&beta);
        }
    };

    let bias = compute_bias(&beta, &grad, c, eps);
    let dual_objective = -primal_form_objective(&beta, &grad, y, eps);
    SmoSolution {
        beta,
        bias,
        summary: SmoSummary {
            iterations,
            max_violation,
            converged,
            dual_objective,
        },
    }
}
