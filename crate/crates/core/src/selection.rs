//! Choice of the debiasing row along the lambda path.
//!
//! `Weighted` minimizes `delta * |a - S m|_inf + |m|_1 * mean_G |X'GX/n|_inf`
//! over the grid. `TuningFree` keeps the grid points whose exact cost
//! `d(lambda) = gap + mean_G |m'X'GX/n|_inf` does not exceed the relaxed cost
//! `d'(b)` at a reference level `b`, and among them takes the smallest gap.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::actions::{mean_cross_moment, GroupActionSet};
use crate::clime::{self, DebiasRow, GramMatrix};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};

pub const DEFAULT_DELTA: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    #[default]
    Weighted,
    TuningFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub delta: f64,
    pub lambda_grid: Vec<f64>,
    pub mode: SelectionMode,
    /// Scale of the tuning-free reference level; `None` uses `8 sqrt(Gamma_hat)`.
    pub delta1: Option<f64>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            delta: DEFAULT_DELTA,
            lambda_grid: clime::default_grid(),
            mode: SelectionMode::Weighted,
            delta1: None,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 1.0) || !self.delta.is_finite() {
            return Err(Error::Config(format!("delta must be >= 1, got {}", self.delta)));
        }
        if let Some(d1) = self.delta1 {
            if !(d1 > 0.0) || !d1.is_finite() {
                return Err(Error::Config(format!("delta1 must be positive, got {d1}")));
            }
        }
        clime::validate_grid(&self.lambda_grid)
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub gap: f64,
    pub l1: f64,
    pub objective: f64,
    /// Exact residual-substitution cost `d(lambda)` (tuning-free mode only).
    pub exact_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub lambda_star: f64,
    pub row: DebiasRow,
    pub objective: f64,
    /// `(|a - S m|_inf, |m|_1 * mean cross-moment)` at the winner.
    pub bound_terms: (f64, f64),
    pub mean_cross: f64,
    pub candidates: Vec<GridPoint>,
    /// Tuning-free mode fell back to the reference row because no grid
    /// point passed the cost filter.
    pub fallback: bool,
}

/// `delta * gap + |m|_1 * mean_cross`
pub fn objective(row: &DebiasRow, mean_cross: f64, delta: f64) -> Result<f64> {
    if !row.gap.is_finite() || !row.l1.is_finite() || !mean_cross.is_finite() || !delta.is_finite()
    {
        return Err(Error::NonFinite("selection objective"));
    }
    Ok(delta * row.gap + row.l1 * mean_cross)
}

/// Everything selection needs about one design, computed once and shared
/// across contrasts.
#[derive(Debug, Clone)]
pub struct SelectionInputs<'a> {
    pub gram: &'a GramMatrix,
    pub x: ArrayView2<'a, f64>,
    pub actions: &'a GroupActionSet,
    pub mean_cross: f64,
    pub exec: Execution,
}

impl<'a> SelectionInputs<'a> {
    pub fn new(
        gram: &'a GramMatrix,
        x: ArrayView2<'a, f64>,
        actions: &'a GroupActionSet,
        exec: Execution,
    ) -> Result<Self> {
        let mean_cross = mean_cross_moment(x, actions, exec)?;
        Ok(SelectionInputs {
            gram,
            x,
            actions,
            mean_cross,
            exec,
        })
    }
}

pub fn select(inputs: &SelectionInputs, a: ArrayView1<f64>, cfg: &SelectionConfig) -> Result<SelectionResult> {
    cfg.validate()?;
    match cfg.mode {
        SelectionMode::Weighted => select_weighted(inputs, a, cfg),
        SelectionMode::TuningFree => select_tuning_free(inputs, a, cfg),
    }
}

pub fn select_weighted(
    inputs: &SelectionInputs,
    a: ArrayView1<f64>,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    let path = clime::solve_path(inputs.gram, a, &cfg.lambda_grid)?;
    if path.rows.is_empty() {
        return Err(Error::NoFeasibleRow);
    }
    let mut candidates = Vec::with_capacity(path.rows.len());
    let mut best = 0;
    for (k, row) in path.rows.iter().enumerate() {
        let obj = objective(row, inputs.mean_cross, cfg.delta)?;
        candidates.push(GridPoint {
            lambda: row.lambda,
            gap: row.gap,
            l1: row.l1,
            objective: obj,
            exact_cost: None,
        });
        // descending grid: strict improvement keeps ties at the larger lambda
        if obj < candidates[best].objective {
            best = k;
        }
    }
    let row = path.rows[best].clone();
    Ok(SelectionResult {
        lambda_star: row.lambda,
        objective: candidates[best].objective,
        bound_terms: (row.gap, row.l1 * inputs.mean_cross),
        mean_cross: inputs.mean_cross,
        row,
        candidates,
        fallback: false,
    })
}

/// Plug-in `max_{u,v} mean_i (X_iu X_iv)^2`.
pub fn gamma_hat(x: ArrayView2<f64>) -> f64 {
    let sq = x.mapv(|v| v * v);
    let fourth = sq.t().dot(&sq) / x.nrows() as f64;
    fourth.iter().fold(0.0, |m, v| m.max(*v))
}

/// `delta1 sqrt((log(pn) + 2 log p) / n)`
pub fn tuning_free_level(delta1: f64, n: usize, p: usize) -> f64 {
    let (nf, pf) = (n as f64, p as f64);
    delta1 * (((pf * nf).ln() + 2.0 * pf.ln()) / nf).sqrt()
}

/// `mean_G |m' X' G X / n|_inf`
pub fn exact_cross_cost(
    x: ArrayView2<f64>,
    actions: &GroupActionSet,
    m: ArrayView1<f64>,
    exec: Execution,
) -> Result<f64> {
    let w: Array1<f64> = x.dot(&m);
    let n = x.nrows() as f64;
    let per = exec::map_slice(exec, &actions.actions, |g| -> Result<f64> {
        let gw = g.apply_transpose(w.view())?;
        let v = x.t().dot(&gw);
        Ok(v.iter().fold(0.0f64, |acc, t| acc.max(t.abs())) / n)
    });
    let mut total = 0.0;
    for v in per {
        total += v?;
    }
    Ok(total / actions.count() as f64)
}

pub fn select_tuning_free(
    inputs: &SelectionInputs,
    a: ArrayView1<f64>,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    let (n, p) = inputs.x.dim();
    let delta1 = match cfg.delta1 {
        Some(d) => d,
        None => 8.0 * gamma_hat(inputs.x).sqrt(),
    };
    let b = tuning_free_level(delta1, n, p);
    if !(b < 1.0) {
        return Err(Error::Config(format!(
            "tuning-free reference level {b:.4} is not below 1; choose a smaller delta1"
        )));
    }
    let ref_row = clime::solve_row(inputs.gram, a, b)?.ok_or(Error::NoFeasibleRow)?;
    let reference = ref_row.gap + ref_row.l1 * inputs.mean_cross;
    let limit = reference * (1.0 + 1e-12);

    let path = clime::solve_path(inputs.gram, a, &cfg.lambda_grid)?;
    let mut candidates = Vec::with_capacity(path.rows.len());
    let mut best: Option<usize> = None;
    for (k, row) in path.rows.iter().enumerate() {
        let exact = row.gap + exact_cross_cost(inputs.x, inputs.actions, row.m.view(), inputs.exec)?;
        candidates.push(GridPoint {
            lambda: row.lambda,
            gap: row.gap,
            l1: row.l1,
            objective: objective(row, inputs.mean_cross, cfg.delta)?,
            exact_cost: Some(exact),
        });
        if exact <= limit && best.is_none_or(|bk| row.gap < path.rows[bk].gap) {
            best = Some(k);
        }
    }
    let (row, fallback) = match best {
        Some(k) => (path.rows[k].clone(), false),
        None => (ref_row, true),
    };
    let obj = objective(&row, inputs.mean_cross, cfg.delta)?;
    Ok(SelectionResult {
        lambda_star: row.lambda,
        objective: obj,
        bound_terms: (row.gap, row.l1 * inputs.mean_cross),
        mean_cross: inputs.mean_cross,
        row,
        candidates,
        fallback,
    })
}
