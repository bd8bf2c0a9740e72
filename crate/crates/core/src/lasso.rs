//! Lasso and square-root Lasso by cyclic coordinate descent.
//!
//! Both solvers work on the Gram form `S = X'X/n`, `c = X'y/n` and keep the
//! gradient `c - S b` up to date after every coordinate move (covariance
//! updates). A fit is only returned once its KKT certificate holds.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Cap on full coordinate sweeps per Lasso solve.
    pub max_sweeps: usize,
    /// Sweep stops when the largest coefficient change falls below this.
    pub tol: f64,
    /// Tolerance of the returned KKT certificate.
    pub kkt_tol: f64,
    /// Pivotal constant `c` of the square-root Lasso penalty `c sqrt(2 log p / n)`.
    pub sqrt_c: f64,
    /// Scale iteration of the square-root Lasso stops when sigma moves less than this.
    pub sigma_tol: f64,
    pub max_scale_iters: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            max_sweeps: 10_000,
            tol: 1e-9,
            kkt_tol: 1e-6,
            sqrt_c: 1.1,
            sigma_tol: 1e-8,
            max_scale_iters: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub beta: Array1<f64>,
    /// Lasso-scale penalty of the fit.
    pub lambda1: f64,
    pub residuals: Array1<f64>,
    pub support_size: usize,
    /// Residuals carry the `sqrt(n / (n - s))` finite-sample rescaling.
    pub corrected: bool,
    /// The fit interpolates the response (zero residual norm).
    pub degenerate: bool,
}

impl LassoFit {
    fn from_beta(data: &Dataset, beta: Array1<f64>, lambda1: f64) -> LassoFit {
        let residuals = &data.y - &data.x.dot(&beta);
        let support_size = beta.iter().filter(|b| **b != 0.0).count();
        LassoFit {
            beta,
            lambda1,
            residuals,
            support_size,
            corrected: false,
            degenerate: false,
        }
    }
}

/// `(1/2n)|y - X b|^2 + lambda |b|_1`
pub fn lasso_objective(data: &Dataset, beta: ArrayView1<f64>, lambda1: f64) -> f64 {
    let r = &data.y - &data.x.dot(&beta);
    r.dot(&r) / (2.0 * data.n() as f64) + lambda1 * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// `|y - X b|_2 / sqrt(n) + lambda |b|_1`
pub fn sqrt_lasso_objective(data: &Dataset, beta: ArrayView1<f64>, lambda: f64) -> f64 {
    let r = &data.y - &data.x.dot(&beta);
    r.dot(&r).sqrt() / (data.n() as f64).sqrt()
        + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Largest violation of the Lasso optimality conditions at `beta`.
///
/// With `g = X'(y - X b)/n`: `|g_j - lambda sign(b_j)|` on the support and
/// `max(|g_j| - lambda, 0)` off it.
pub fn kkt_violation(data: &Dataset, beta: ArrayView1<f64>, lambda1: f64) -> f64 {
    let r = &data.y - &data.x.dot(&beta);
    let g = data.x.t().dot(&r) / data.n() as f64;
    g.iter()
        .zip(beta.iter())
        .map(|(&gj, &bj)| {
            if bj != 0.0 {
                (gj - lambda1 * bj.signum()).abs()
            } else {
                (gj.abs() - lambda1).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// The pivotal square-root Lasso penalty `c sqrt(2 log p / n)`.
pub fn pivotal_penalty(c: f64, n: usize, p: usize) -> f64 {
    c * (2.0 * (p as f64).ln() / n as f64).sqrt()
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Gram-form coordinate descent state shared by repeated solves on one design.
pub(crate) struct CoordinateDescent<'a> {
    data: &'a Dataset,
    gram: Array2<f64>,
    xty: Array1<f64>,
}

impl<'a> CoordinateDescent<'a> {
    pub(crate) fn new(data: &'a Dataset) -> Self {
        let n = data.n() as f64;
        let gram = data.x.t().dot(&data.x) / n;
        let xty = data.x.t().dot(&data.y) / n;
        CoordinateDescent { data, gram, xty }
    }

    fn objective(&self, beta: &Array1<f64>, lambda1: f64) -> f64 {
        lasso_objective(self.data, beta.view(), lambda1)
    }

    /// Solves at `lambda1` starting from `warm`; `trace` receives the
    /// objective after every sweep.
    pub(crate) fn solve(
        &self,
        lambda1: f64,
        warm: Option<&Array1<f64>>,
        opts: &LassoOptions,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<Array1<f64>> {
        let p = self.data.p();
        let mut beta = warm.cloned().unwrap_or_else(|| Array1::zeros(p));
        let mut grad = &self.xty - &self.gram.dot(&beta);

        let mut last_violation = f64::INFINITY;
        for _sweep in 0..opts.max_sweeps {
            let mut max_change = 0.0f64;
            for j in 0..p {
                let sjj = self.gram[[j, j]];
                if sjj <= 0.0 {
                    continue;
                }
                let old = beta[j];
                let z = grad[j] + sjj * old;
                let new = soft_threshold(z, lambda1) / sjj;
                let delta = new - old;
                if delta != 0.0 {
                    beta[j] = new;
                    grad.scaled_add(-delta, &self.gram.column(j));
                    max_change = max_change.max(delta.abs());
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(&beta, lambda1));
            }
            if max_change < opts.tol {
                last_violation = kkt_violation(self.data, beta.view(), lambda1);
                if last_violation <= opts.kkt_tol {
                    return Ok(beta);
                }
                // refresh accumulated drift before continuing
                grad = &self.xty - &self.gram.dot(&beta);
            }
        }
        if !last_violation.is_finite() {
            last_violation = kkt_violation(self.data, beta.view(), lambda1);
        }
        Err(Error::NotConverged {
            iterations: opts.max_sweeps,
            kkt_violation: last_violation,
        })
    }
}

/// Minimizes `(1/2n)|y - X b|^2 + lambda1 |b|_1`.
pub fn fit_lasso(data: &Dataset, lambda1: f64, opts: &LassoOptions) -> Result<LassoFit> {
    if !(lambda1 >= 0.0) || !lambda1.is_finite() {
        return Err(Error::InvalidInput(format!(
            "lambda1 must be a finite nonnegative number, got {lambda1}"
        )));
    }
    data.validate()?;
    let cd = CoordinateDescent::new(data);
    let beta = cd.solve(lambda1, None, opts, None)?;
    Ok(LassoFit::from_beta(data, beta, lambda1))
}

/// Minimizes `|y - X b|_2 / sqrt(n) + lambda_sq |b|_1` with the pivotal
/// penalty, by alternating a Lasso solve at `lambda_sq * sigma` with the
/// scale update `sigma = |y - X b|_2 / sqrt(n)`.
///
/// The returned `lambda1` is the equivalent Lasso-scale penalty
/// `lambda_sq * sigma_hat`.
pub fn fit_sqrt_lasso(data: &Dataset, opts: &LassoOptions) -> Result<LassoFit> {
    data.validate()?;
    let n = data.n();
    let lambda_sq = pivotal_penalty(opts.sqrt_c, n, data.p());
    fit_sqrt_lasso_with_penalty(data, lambda_sq, opts)
}

pub fn fit_sqrt_lasso_with_penalty(
    data: &Dataset,
    lambda_sq: f64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    let sqrt_n = (data.n() as f64).sqrt();
    let y_norm = data.y.dot(&data.y).sqrt();
    let p = data.p();
    if y_norm == 0.0 {
        let mut fit = LassoFit::from_beta(data, Array1::zeros(p), 0.0);
        fit.degenerate = true;
        return Ok(fit);
    }
    let floor = 1e-12 * y_norm / sqrt_n;

    let cd = CoordinateDescent::new(data);
    let mut sigma = y_norm / sqrt_n;
    let mut beta: Array1<f64> = Array1::zeros(p);
    for _ in 0..opts.max_scale_iters {
        beta = cd.solve(lambda_sq * sigma, Some(&beta), opts, None)?;
        let r = &data.y - &data.x.dot(&beta);
        let next = r.dot(&r).sqrt() / sqrt_n;
        if next <= floor {
            let mut fit = LassoFit::from_beta(data, beta, 0.0);
            fit.degenerate = true;
            return Ok(fit);
        }
        let moved = (next - sigma).abs();
        sigma = next;
        if moved < opts.sigma_tol {
            return Ok(LassoFit::from_beta(data, beta, lambda_sq * sigma));
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_scale_iters,
        kkt_violation: kkt_violation(data, beta.view(), lambda_sq * sigma),
    })
}

/// Rescales residuals by `sqrt(n / (n - s))`, `s` the support size.
pub fn correct_residuals(fit: &LassoFit, n: usize) -> Result<LassoFit> {
    if fit.degenerate {
        return Err(Error::DegenerateFit(
            "the fit interpolates the response".into(),
        ));
    }
    if fit.support_size >= n {
        return Err(Error::DegenerateFit("full support".into()));
    }
    if fit.corrected {
        return Ok(fit.clone());
    }
    let factor = (n as f64 / (n - fit.support_size) as f64).sqrt();
    let mut out = fit.clone();
    out.residuals.mapv_inplace(|r| r * factor);
    out.corrected = true;
    Ok(out)
}
