//! BFGS with central-difference gradients.
//!
//! Objectives are minimized; a non-finite value marks an infeasible point and
//! makes the line search backtrack.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Stop when the gradient infinity-norm falls below this.
    pub grad_tol: f64,
    /// Stop when `|f_k - f_{k-1}| / max(|f_{k-1}|, 1)` falls below this.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step for gradients.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-5,
            rel_tol: 1e-9,
            max_iter: 500,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    GradientConverged,
    ValueConverged,
    MaxIter,
    LineSearchFailed,
    /// Closed-form estimator, no iterations.
    ClosedForm,
}

impl Status {
    pub fn converged(self) -> bool {
        matches!(
            self,
            Status::GradientConverged | Status::ValueConverged | Status::ClosedForm
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::GradientConverged => "gradient-converged",
            Status::ValueConverged => "value-converged",
            Status::MaxIter => "max-iter",
            Status::LineSearchFailed => "line-search-failed",
            Status::ClosedForm => "closed-form",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_start: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
}

impl Minimum {
    pub fn grad_norm(&self) -> f64 {
        inf_norm(&self.grad)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn fd_steps(x: &[f64], rel: f64) -> Vec<f64> {
    x.iter().map(|v| rel * v.abs().max(1.0)).collect()
}

/// Central-difference gradient; coordinates are evaluated in parallel.
pub fn gradient<F>(f: &F, x: &[f64], rel_step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let h = fd_steps(x, rel_step);
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h[i];
            xm[i] -= h[i];
            (f(&xp) - f(&xm)) / (xp[i] - xm[i])
        })
        .collect()
}

/// Central-difference Hessian from function values.
pub fn hessian<F>(f: &F, x: &[f64], rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x.len();
    let h = fd_steps(x, rel_step);
    let f0 = f(x);
    let eval = |moves: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in moves {
            y[i] += s * h[i];
        }
        f(&y)
    };
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                (eval(&[(i, 1.0)]) - 2.0 * f0 + eval(&[(i, -1.0)])) / (h[i] * h[i])
            } else {
                (eval(&[(i, 1.0), (j, 1.0)])
                    - eval(&[(i, 1.0), (j, -1.0)])
                    - eval(&[(i, -1.0), (j, 1.0)])
                    + eval(&[(i, -1.0), (j, -1.0)]))
                    / (4.0 * h[i] * h[j])
            }
        })
        .collect();
    let mut hm = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        hm[(i, j)] = v;
        hm[(j, i)] = v;
    }
    hm
}

/// Backtracking Armijo line search with safeguarded quadratic interpolation.
/// Returns `(step, f_new, evaluations)`.
fn line_search<F>(f: &F, x: &[f64], fx: f64, g: &[f64], dir: &[f64]) -> Option<(f64, f64, usize)>
where
    F: Fn(&[f64]) -> f64,
{
    let slope: f64 = g.iter().zip(dir).map(|(a, b)| a * b).sum();
    if !(slope < 0.0) {
        return None;
    }
    let mut alpha = 1.0;
    let mut evals = 0;
    let mut y = vec![0.0; x.len()];
    for _ in 0..60 {
        for ((yi, xi), di) in y.iter_mut().zip(x).zip(dir) {
            *yi = xi + alpha * di;
        }
        let fy = f(&y);
        evals += 1;
        if fy.is_finite() && fy <= fx + 1e-4 * alpha * slope {
            return Some((alpha, fy, evals));
        }
        let next = if fy.is_finite() {
            // Minimizer of the quadratic through f(0), f'(0) and f(alpha).
            let q = -slope * alpha * alpha / (2.0 * (fy - fx - slope * alpha));
            q.clamp(0.1 * alpha, 0.5 * alpha)
        } else {
            0.25 * alpha
        };
        alpha = next;
    }
    None
}

/// Minimizes `f` from `x0`.
pub fn minimize<F>(f: &F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let f_start = fx;
    let mut evaluations = 1;
    if !fx.is_finite() || n == 0 {
        return Minimum {
            x,
            f: fx,
            f_start,
            grad: vec![0.0; n],
            iterations: 0,
            evaluations,
            status: if n == 0 {
                Status::GradientConverged
            } else {
                Status::LineSearchFailed
            },
        };
    }
    let mut g = gradient(f, &x, opts.fd_step);
    evaluations += 2 * n;
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut status = Status::MaxIter;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if inf_norm(&g) < opts.grad_tol {
            status = Status::GradientConverged;
            break;
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut dir: Vec<f64> = (-(&hinv * &gv)).iter().copied().collect();
        if fresh {
            // Untrusted curvature: cap the first trial step at unit length.
            let norm = inf_norm(&dir);
            if norm > 1.0 {
                dir.iter_mut().for_each(|d| *d /= norm);
            }
        }
        let found = line_search(f, &x, fx, &g, &dir);
        let (alpha, fnew, evals) = match found {
            Some(r) => r,
            None if !fresh => {
                log::debug!("line search failed at iteration {iterations}; resetting curvature");
                hinv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            None => {
                status = Status::LineSearchFailed;
                break;
            }
        };
        evaluations += evals;
        let s: Vec<f64> = dir.iter().map(|d| alpha * d).collect();
        let xnew: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        let gnew = gradient(f, &xnew, opts.fd_step);
        evaluations += 2 * n;

        let sv = DVector::from_column_slice(&s);
        let yv = DVector::from_iterator(n, gnew.iter().zip(&g).map(|(a, b)| a - b));
        let sy = sv.dot(&yv);
        if sy > 1e-12 * sv.norm() * yv.norm() {
            if fresh {
                hinv *= sy / yv.dot(&yv);
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H - rho (s y'H + H y s') + (rho^2 y'Hy + rho) s s'
            hinv -= rho * (&sv * hy.transpose() + &hy * sv.transpose());
            hinv += (rho * rho * yhy + rho) * (&sv * sv.transpose());
            fresh = false;
        }

        let rel = (fx - fnew).abs() / fx.abs().max(1.0);
        x = xnew;
        fx = fnew;
        g = gnew;
        if inf_norm(&g) < opts.grad_tol {
            status = Status::GradientConverged;
            break;
        }
        if rel < opts.rel_tol {
            status = Status::ValueConverged;
            break;
        }
    }
    Minimum {
        x,
        f: fx,
        f_start,
        grad: g,
        iterations,
        evaluations,
        status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(
            &f,
            &[-1.2, 1.0],
            &BfgsOptions {
                rel_tol: 0.0,
                ..Default::default()
            },
        );
        assert!(m.status.converged(), "{:?}", m.status);
        assert!(
            (m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4,
            "{:?}",
            m.x
        );
        assert!(m.f <= m.f_start);
    }

    #[test]
    fn quadratic_hessian() {
        let f = |x: &[f64]| 2.0 * x[0] * x[0] + x[0] * x[1] + 3.0 * x[1] * x[1] + x[2].powi(2);
        let h = hessian(&f, &[0.3, -0.2, 1.0], 1e-4);
        let expected =
            DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 6.0, 0.0, 0.0, 0.0, 2.0]);
        assert!((h - expected).abs().max() < 1e-6);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // Minimum at x = 0.5 next to a wall at x = 1.
        let f = |x: &[f64]| {
            if x[0] >= 1.0 {
                f64::NAN
            } else {
                (x[0] - 0.5).powi(2) - (1.0 - x[0]).ln() * 1e-3
            }
        };
        let m = minimize(&f, &[-3.0], &BfgsOptions::default());
        assert!(m.status.converged());
        assert!(m.x[0] < 1.0 && (m.x[0] - 0.5).abs() < 0.01);
    }
}
