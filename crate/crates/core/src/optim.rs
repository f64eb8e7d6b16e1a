//! Quasi-Newton and Newton minimizers with backtracking line search, plus the
//! finite-difference Hessian and covariance helpers used for standard errors.

use nalgebra::{DMatrix, DVector};

use crate::numeric::inf_norm;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    /// Convergence threshold on the gradient infinity-norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl OptimOutcome {
    pub fn gradient_norm(&self) -> f64 {
        inf_norm(&self.gradient)
    }

    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.iterations,
                gradient_norm: self.gradient_norm(),
            })
        }
    }
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn armijo_ok(f0: f64, f1: f64, alpha: f64, slope: f64) -> bool {
    // Rounding slack: near the optimum the predicted decrease falls below the
    // resolution of the objective.
    let slack = 16.0 * f64::EPSILON * (1.0 + f0.abs());
    f1.is_finite() && f1 <= f0 + ARMIJO_C * alpha * slope + slack
}

/// Backtracking search along `dir`. Returns the accepted point, or `None`
/// when no step length gives sufficient decrease.
fn line_search<F>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    slope: f64,
    dir: &[f64],
) -> Option<(Vec<f64>, f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut alpha = 1.0;
    for _ in 0..MAX_HALVINGS {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + alpha * d).collect();
        if let Ok((ft, gt)) = f(&trial) {
            if armijo_ok(fx, ft, alpha, slope) && gt.iter().all(|g| g.is_finite()) {
                return Some((trial, ft, gt));
            }
        }
        alpha *= 0.5;
    }
    None
}

fn scaled_identity(n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::identity(n, n) * scale
}

/// BFGS on the inverse Hessian. `inv_hessian0` lets callers supply a
/// curvature-aware starting matrix; otherwise a scaled identity is used.
pub fn bfgs<F>(
    mut f: F,
    x0: &[f64],
    inv_hessian0: Option<DMatrix<f64>>,
    cfg: &OptimConfig,
) -> Result<OptimOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut fx, mut g) = f(x0)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("objective not finite at the starting point".into()));
    }
    let mut x = x0.to_vec();
    let user_h0 = inv_hessian0.is_some();
    let reset_h = |g: &[f64]| scaled_identity(n, 1.0 / inf_norm(g).max(1.0));
    let mut h = inv_hessian0.clone().unwrap_or_else(|| reset_h(&g));
    let mut fresh = !user_h0;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        if inf_norm(&g) < cfg.tol {
            return Ok(OptimOutcome {
                x,
                value: fx,
                gradient: g,
                iterations,
                converged: true,
            });
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&h * &gv);
        let mut slope = gv.dot(&dir);
        if !(slope < 0.0) {
            h = inv_hessian0.clone().unwrap_or_else(|| reset_h(&g));
            dir = -(&h * &gv);
            slope = gv.dot(&dir);
        }
        let step = match line_search(&mut f, &x, fx, slope, dir.as_slice()) {
            Some(s) => s,
            None => {
                // Retry once along steepest descent before giving up.
                let sd: Vec<f64> = g.iter().map(|v| -v / inf_norm(&g).max(1.0)).collect();
                let sd_slope: f64 = g.iter().zip(&sd).map(|(a, b)| a * b).sum();
                match line_search(&mut f, &x, fx, sd_slope, &sd) {
                    Some(s) => {
                        h = inv_hessian0.clone().unwrap_or_else(|| reset_h(&g));
                        fresh = !user_h0;
                        s
                    }
                    None => break,
                }
            }
        };
        let (xn, fxn, gn) = step;
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h = scaled_identity(n, sy / y.dot(&y));
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + rho^2 (y'Hy) s s' + rho s s'
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        x = xn;
        fx = fxn;
        g = gn;
    }
    let converged = inf_norm(&g) < cfg.tol;
    Ok(OptimOutcome {
        x,
        value: fx,
        gradient: g,
        iterations,
        converged,
    })
}

/// Damped Newton for objectives with an analytic Hessian. `f` returns value,
/// gradient and Hessian of the function being minimized.
pub fn newton<F>(mut f: F, x0: &[f64], cfg: &OptimConfig) -> Result<OptimOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, DMatrix<f64>)>,
{
    let mut x = x0.to_vec();
    let (mut fx, mut g, mut hess) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::Numeric("objective not finite at the starting point".into()));
    }
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if inf_norm(&g) < cfg.tol {
            return Ok(OptimOutcome {
                x,
                value: fx,
                gradient: g,
                iterations,
                converged: true,
            });
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let dir = newton_direction(&hess, &gv);
        let slope = gv.dot(&dir);
        let mut fg = |p: &[f64]| f(p).map(|(v, g, _)| (v, g));
        let Some((xn, _, _)) = line_search(&mut fg, &x, fx, slope, dir.as_slice()) else {
            break;
        };
        let (fxn, gn, hn) = f(&xn)?;
        x = xn;
        fx = fxn;
        g = gn;
        hess = hn;
    }
    let converged = inf_norm(&g) < cfg.tol;
    Ok(OptimOutcome {
        x,
        value: fx,
        gradient: g,
        iterations,
        converged,
    })
}

fn newton_direction(hess: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let scale = hess.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..30 {
        let m = hess + DMatrix::identity(n, n) * ridge;
        if let Some(ch) = m.cholesky() {
            return -ch.solve(g);
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 10.0 };
    }
    -g / scale
}

/// Central-difference Jacobian of an analytic gradient, symmetrized.
pub fn fd_hessian<G>(mut grad: G, x: &[f64]) -> Result<DMatrix<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let step = 1e-5 * x[i].abs().max(1e-2);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += step;
        xm[i] -= step;
        let gp = grad(&xp)?;
        let gm = grad(&xm)?;
        for j in 0..n {
            h[(j, i)] = (gp[j] - gm[j]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Inverse of a symmetric positive-definite matrix; fails with a rank error
/// when the Cholesky factorization does not exist.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let ch = m.clone().cholesky().ok_or_else(|| {
        Error::Rank(format!("{what} is singular or not positive definite"))
    })?;
    let inv = ch.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Rank(format!("{what} inverse is not finite")));
    }
    Ok(inv)
}

/// Cluster-robust sandwich `A^{-1} B A^{-1}` from per-cluster scores.
pub fn sandwich(bread_inv: &DMatrix<f64>, cluster_scores: &[Vec<f64>]) -> DMatrix<f64> {
    let n = bread_inv.nrows();
    let mut meat = DMatrix::zeros(n, n);
    for s in cluster_scores {
        let v = DVector::from_column_slice(s);
        meat += &v * v.transpose();
    }
    bread_inv * meat * bread_inv
}
