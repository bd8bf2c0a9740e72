//! Randomization test and confidence interval for `a' beta = a0`.
//!
//! Pipeline: pilot fit, residual rescaling, debiasing-row selection,
//! debiased estimate `a'b + m'X'(y - X b)/n`, statistic
//! `T = sqrt(n) (a'beta_d - a0)`, randomization values
//! `m'X'(G eps_hat)/sqrt(n)` over the action set, then counting.
//!
//! Two-sided p-values are equal-tailed, `min(1, 2 min(#{v >= T}, #{v <= T}) / N)`,
//! and intervals use the order statistics `v_(K)` and `v_(N+1-K)` with
//! `K = floor(N pi0 / 2) + 1`. Under this pairing `a0` lies in the closed
//! level-`(1 - pi0)` interval exactly when the two-sided p-value exceeds `pi0`.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::actions::{mean_cross_moment, GroupActionSet};
use crate::clime::{DebiasRow, GramMatrix};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::lasso::{self, LassoFit, LassoOptions};
use crate::selection::{self, SelectionConfig, SelectionInputs, SelectionResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub a: Array1<f64>,
    pub a0: f64,
}

impl Hypothesis {
    pub fn new(a: Array1<f64>, a0: f64) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) || !a0.is_finite() {
            return Err(Error::NonFinite("hypothesis"));
        }
        if a.iter().map(|v| v.abs()).sum::<f64>() <= 0.0 {
            return Err(Error::InvalidInput("contrast a must be nonzero".into()));
        }
        Ok(Hypothesis { a, a0 })
    }

    /// `beta_j = a0`
    pub fn coordinate(p: usize, j: usize, a0: f64) -> Result<Self> {
        if j >= p {
            return Err(Error::InvalidInput(format!("coordinate {j} out of range for p = {p}")));
        }
        let mut a = Array1::zeros(p);
        a[j] = 1.0;
        Hypothesis::new(a, a0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationResult {
    pub t_obs: f64,
    pub values: Vec<f64>,
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub debiased: f64,
    pub lambda_star: f64,
    /// The randomization distribution collapsed to a single value.
    pub point_mass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Confidence level `1 - pi0`.
    pub level: f64,
    /// Lower and upper randomization quantiles.
    pub quantiles: (f64, f64),
    /// Fewer than `2 / pi0` randomization values were available.
    pub undersampled: bool,
}

impl ConfidenceInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Pilot penalty choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    /// Square-root Lasso with the pivotal penalty.
    #[default]
    Pivotal,
    /// Plain Lasso at a fixed `lambda1`.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InferenceConfig {
    pub penalty: Penalty,
    pub lasso: LassoOptions,
    pub selection: SelectionConfig,
    pub exec: Execution,
}

/// `a'b + m'X'(y - X b)/n` with the uncorrected residuals.
pub fn debiased_estimate(
    fit: &LassoFit,
    row: &DebiasRow,
    data: &Dataset,
    a: ArrayView1<f64>,
) -> Result<f64> {
    let p = data.p();
    if fit.beta.len() != p || row.m.len() != p || a.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "beta {}, m {}, a {} vs p = {p}",
            fit.beta.len(),
            row.m.len(),
            a.len()
        )));
    }
    let resid = &data.y - &data.x.dot(&fit.beta);
    let w = data.x.dot(&row.m);
    Ok(a.dot(&fit.beta) + w.dot(&resid) / data.n() as f64)
}

/// `m'X'(G r)/sqrt(n)` for every action, with `w = X m` formed once.
pub fn randomization_values(
    m: ArrayView1<f64>,
    residuals: ArrayView1<f64>,
    x: ArrayView2<f64>,
    actions: &GroupActionSet,
    exec: Execution,
) -> Result<Vec<f64>> {
    let n = x.nrows();
    if residuals.len() != n || m.len() != x.ncols() {
        return Err(Error::DimensionMismatch("residuals or m do not match X".into()));
    }
    if actions.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "actions act on {} observations, X has {n}",
            actions.n()
        )));
    }
    let w = x.dot(&m);
    let r = residuals.to_owned();
    let (w, r) = (w.as_slice().expect("contiguous"), r.as_slice().expect("contiguous"));
    let scale = 1.0 / (n as f64).sqrt();
    Ok(exec::map_slice(exec, &actions.actions, |g| g.dot(w, r) * scale))
}

/// Attainable randomization values from rescaled pilot residuals.
pub fn attainable_values(
    row: &DebiasRow,
    fit: &LassoFit,
    x: ArrayView2<f64>,
    actions: &GroupActionSet,
    exec: Execution,
) -> Result<Vec<f64>> {
    if fit.degenerate {
        return Err(Error::DegenerateFit("residuals of an interpolating fit".into()));
    }
    if !fit.corrected {
        return Err(Error::InvalidInput(
            "attainable values need rescaled residuals".into(),
        ));
    }
    randomization_values(row.m.view(), fit.residuals.view(), x, actions, exec)
}

/// `(#{v >= t}/N, min(1, 2 min(#{v >= t}, #{v <= t})/N))`
pub fn pvalue(t_obs: f64, values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty randomization distribution".into()));
    }
    let n = values.len() as f64;
    let upper = values.iter().filter(|v| **v >= t_obs).count() as f64;
    let lower = values.iter().filter(|v| **v <= t_obs).count() as f64;
    Ok((upper / n, (2.0 * upper.min(lower) / n).min(1.0)))
}

/// Order statistics `(v_(K), v_(N+1-K))`, `K = floor(N pi0 / 2) + 1`;
/// infinite at `pi0 = 0`.
pub fn quantile_bounds(values: &[f64], pi0: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty randomization distribution".into()));
    }
    if !(0.0..1.0).contains(&pi0) {
        return Err(Error::InvalidInput(format!("pi0 must lie in [0, 1), got {pi0}")));
    }
    if pi0 == 0.0 {
        return Ok((f64::NEG_INFINITY, f64::INFINITY));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((n as f64 * pi0 / 2.0).floor() as usize + 1).min(n);
    Ok((sorted[k - 1], sorted[n - k]))
}

/// `(beta_d - tau_hi / sqrt(n), beta_d - tau_lo / sqrt(n))`
pub fn confidence_interval(
    debiased: f64,
    values: &[f64],
    pi0: f64,
    n: usize,
) -> Result<ConfidenceInterval> {
    let (lo, hi) = quantile_bounds(values, pi0)?;
    let sqrt_n = (n as f64).sqrt();
    Ok(ConfidenceInterval {
        lower: debiased - hi / sqrt_n,
        upper: debiased - lo / sqrt_n,
        level: 1.0 - pi0,
        quantiles: (lo, hi),
        undersampled: pi0 > 0.0 && (values.len() as f64) < 2.0 / pi0,
    })
}

/// Result of analysing one contrast: everything except the null value.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastAnalysis {
    pub a: Array1<f64>,
    pub debiased: f64,
    pub values: Vec<f64>,
    pub selection: SelectionResult,
    pub n: usize,
}

impl ContrastAnalysis {
    pub fn test(&self, a0: f64) -> Result<RandomizationResult> {
        let t_obs = (self.n as f64).sqrt() * (self.debiased - a0);
        let (p_one_sided, p_two_sided) = pvalue(t_obs, &self.values)?;
        let first = self.values[0];
        Ok(RandomizationResult {
            t_obs,
            values: self.values.clone(),
            p_one_sided,
            p_two_sided,
            debiased: self.debiased,
            lambda_star: self.selection.lambda_star,
            point_mass: self.values.iter().all(|v| *v == first),
        })
    }

    pub fn interval(&self, pi0: f64) -> Result<ConfidenceInterval> {
        confidence_interval(self.debiased, &self.values, pi0, self.n)
    }
}

/// Pilot fit, Gram matrix and mean cross-moment of one dataset, shared by
/// every contrast tested on it.
#[derive(Debug, Clone)]
pub struct PreparedModel<'a> {
    pub data: &'a Dataset,
    pub actions: &'a GroupActionSet,
    pub fit: LassoFit,
    pub corrected: LassoFit,
    pub gram: GramMatrix,
    pub mean_cross: f64,
    pub exec: Execution,
}

impl<'a> PreparedModel<'a> {
    pub fn new(data: &'a Dataset, actions: &'a GroupActionSet, cfg: &InferenceConfig) -> Result<Self> {
        data.validate()?;
        if actions.n() != data.n() {
            return Err(Error::DimensionMismatch(format!(
                "actions act on {} observations, data has {}",
                actions.n(),
                data.n()
            )));
        }
        let fit = match cfg.penalty {
            Penalty::Pivotal => lasso::fit_sqrt_lasso(data, &cfg.lasso),
            Penalty::Fixed(l) => lasso::fit_lasso(data, l, &cfg.lasso),
        }
        .map_err(Error::at("lasso"))?;
        let corrected =
            lasso::correct_residuals(&fit, data.n()).map_err(Error::at("residual correction"))?;
        let gram = GramMatrix::from_design(&data.x);
        let mean_cross =
            mean_cross_moment(data.x.view(), actions, cfg.exec).map_err(Error::at("cross moment"))?;
        Ok(PreparedModel {
            data,
            actions,
            fit,
            corrected,
            gram,
            mean_cross,
            exec: cfg.exec,
        })
    }

    pub fn analyze(&self, a: ArrayView1<f64>, cfg: &SelectionConfig) -> Result<ContrastAnalysis> {
        let inputs = SelectionInputs {
            gram: &self.gram,
            x: self.data.x.view(),
            actions: self.actions,
            mean_cross: self.mean_cross,
            exec: self.exec,
        };
        let sel = selection::select(&inputs, a, cfg).map_err(Error::at("selection"))?;
        let debiased = debiased_estimate(&self.fit, &sel.row, self.data, a)
            .map_err(Error::at("debiased estimate"))?;
        let values = attainable_values(&sel.row, &self.corrected, self.data.x.view(), self.actions, self.exec)
            .map_err(Error::at("randomization"))?;
        Ok(ContrastAnalysis {
            a: a.to_owned(),
            debiased,
            values,
            selection: sel,
            n: self.data.n(),
        })
    }
}

/// Tests `a' beta = a0` end to end.
pub fn test(
    data: &Dataset,
    hypothesis: &Hypothesis,
    actions: &GroupActionSet,
    cfg: &InferenceConfig,
) -> Result<RandomizationResult> {
    let model = PreparedModel::new(data, actions, cfg)?;
    model
        .analyze(hypothesis.a.view(), &cfg.selection)?
        .test(hypothesis.a0)
}
