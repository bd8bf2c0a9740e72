//! Oracle-side quantities for synthetic data with known `beta` and `eps`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::actions::{mean_cross_moment, GroupActionSet};
use crate::clime::{DebiasRow, GramMatrix};
use crate::data::{l1, linf, Dataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inference::randomization_values;
use crate::lasso::LassoFit;
use crate::selection::{self, SelectionConfig, SelectionInputs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleContext {
    pub beta_true: Array1<f64>,
    pub eps_true: Array1<f64>,
    pub sigma: Option<Array2<f64>>,
    pub sigma_inv: Option<Array2<f64>>,
}

impl OracleContext {
    pub fn new(beta_true: Array1<f64>, eps_true: Array1<f64>) -> Self {
        OracleContext {
            beta_true,
            eps_true,
            sigma: None,
            sigma_inv: None,
        }
    }

    /// `y = X beta + eps` to 1e-10.
    pub fn check(&self, data: &Dataset) -> Result<()> {
        if self.beta_true.len() != data.p() || self.eps_true.len() != data.n() {
            return Err(Error::DimensionMismatch(format!(
                "oracle has p = {}, n = {}; data has p = {}, n = {}",
                self.beta_true.len(),
                self.eps_true.len(),
                data.p(),
                data.n()
            )));
        }
        let fitted = data.x.dot(&self.beta_true) + &self.eps_true;
        let worst = (&fitted - &data.y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(worst <= 1e-10) {
            return Err(Error::InvalidInput(format!(
                "oracle context does not reproduce y (max deviation {worst:e})"
            )));
        }
        Ok(())
    }
}

/// `sqrt(n) (a - S m)'(b - beta)`, the bias term shared by every action.
pub fn bias_term(
    ctx: &OracleContext,
    fit: &LassoFit,
    row: &DebiasRow,
    a: ArrayView1<f64>,
    x: ArrayView2<f64>,
) -> f64 {
    let n = x.nrows() as f64;
    let sm = x.t().dot(&x.dot(&row.m)) / n;
    let err = &fit.beta - &ctx.beta_true;
    n.sqrt() * (&a - &sm).dot(&err)
}

/// Oracle randomization values: the bias term plus `m'X'(G eps)/sqrt(n)`.
#[allow(clippy::too_many_arguments)]
pub fn oracle_values(
    ctx: &OracleContext,
    data: &Dataset,
    fit: &LassoFit,
    row: &DebiasRow,
    a: ArrayView1<f64>,
    actions: &GroupActionSet,
    exec: Execution,
) -> Result<Vec<f64>> {
    ctx.check(data)?;
    let bias = bias_term(ctx, fit, row, a, data.x.view());
    let mut v = randomization_values(row.m.view(), ctx.eps_true.view(), data.x.view(), actions, exec)?;
    for t in &mut v {
        *t += bias;
    }
    Ok(v)
}

/// Attainable values computed from the raw residuals `y - X b`, the
/// coupling partner of [`oracle_values`].
pub fn raw_attainable_values(
    data: &Dataset,
    fit: &LassoFit,
    row: &DebiasRow,
    actions: &GroupActionSet,
    exec: Execution,
) -> Result<Vec<f64>> {
    let resid = &data.y - &data.x.dot(&fit.beta);
    randomization_values(row.m.view(), resid.view(), data.x.view(), actions, exec)
}

/// Exact W1 between two equal-size empirical distributions.
pub fn wasserstein1(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "samples of size {} and {}",
            u.len(),
            v.len()
        )));
    }
    let mut su = u.to_vec();
    let mut sv = v.to_vec();
    su.sort_by(f64::total_cmp);
    sv.sort_by(f64::total_cmp);
    let total: f64 = su.iter().zip(&sv).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / u.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Bound {
    pub bound: f64,
    /// `|b - beta|_1 sqrt(n) |a - S m|_inf`
    pub bias: f64,
    /// `|b - beta|_1 |m|_1 mean_G |X'GX/sqrt(n)|_inf`
    pub cost: f64,
}

pub fn lemma1_bound(
    ctx: &OracleContext,
    fit: &LassoFit,
    row: &DebiasRow,
    a: ArrayView1<f64>,
    x: ArrayView2<f64>,
    actions: &GroupActionSet,
    exec: Execution,
) -> Result<Lemma1Bound> {
    let mean_cross = mean_cross_moment(x, actions, exec)?;
    Ok(lemma1_bound_with(ctx, fit, row, a, x, mean_cross))
}

/// As [`lemma1_bound`] with a precomputed `mean_G |X'GX/n|_inf`.
pub fn lemma1_bound_with(
    ctx: &OracleContext,
    fit: &LassoFit,
    row: &DebiasRow,
    a: ArrayView1<f64>,
    x: ArrayView2<f64>,
    mean_cross: f64,
) -> Lemma1Bound {
    let n = x.nrows() as f64;
    let err = l1((&fit.beta - &ctx.beta_true).as_slice().expect("contiguous"));
    let sm = x.t().dot(&x.dot(&row.m)) / n;
    let gap = linf((&a - &sm).as_slice().expect("contiguous"));
    let bias = err * n.sqrt() * gap;
    let cost = err * row.l1 * n.sqrt() * mean_cross;
    Lemma1Bound {
        bound: bias + cost,
        bias,
        cost,
    }
}

/// Coupled oracle and attainable distributions for one contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub w1: f64,
    pub bound: f64,
    pub bias: f64,
    pub cost: f64,
    pub lambda_star: f64,
}

/// Selects the debiasing row for `a`, then compares the oracle and
/// attainable values on the same action sequence.
pub fn diagnose(
    data: &Dataset,
    ctx: &OracleContext,
    fit: &LassoFit,
    a: ArrayView1<f64>,
    actions: &GroupActionSet,
    cfg: &SelectionConfig,
    exec: Execution,
) -> Result<Diagnosis> {
    ctx.check(data)?;
    let gram = GramMatrix::from_design(&data.x);
    let inputs = SelectionInputs::new(&gram, data.x.view(), actions, exec)?;
    let sel = selection::select(&inputs, a, cfg)?;
    let oracle = oracle_values(ctx, data, fit, &sel.row, a, actions, exec)?;
    let attainable = raw_attainable_values(data, fit, &sel.row, actions, exec)?;
    let b = lemma1_bound_with(ctx, fit, &sel.row, a, data.x.view(), inputs.mean_cross);
    Ok(Diagnosis {
        w1: wasserstein1(&oracle, &attainable)?,
        bound: b.bound,
        bias: b.bias,
        cost: b.cost,
        lambda_star: sel.lambda_star,
    })
}

/// `Sigma_ij = rho^|i-j|`
pub fn ar1_covariance(p: usize, rho: f64) -> Array2<f64> {
    Array2::from_shape_fn((p, p), |(i, j)| rho.powi(i.abs_diff(j) as i32))
}

/// Tridiagonal inverse of the AR(1) correlation matrix.
pub fn ar1_precision(p: usize, rho: f64) -> Array2<f64> {
    let mut out = Array2::zeros((p, p));
    let c = 1.0 / (1.0 - rho * rho);
    for i in 0..p {
        let interior = i > 0 && i + 1 < p;
        out[[i, i]] = if p == 1 {
            1.0
        } else if interior {
            (1.0 + rho * rho) * c
        } else {
            c
        };
        if i + 1 < p {
            out[[i, i + 1]] = -rho * c;
            out[[i + 1, i]] = -rho * c;
        }
    }
    out
}
