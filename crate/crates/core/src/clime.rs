//! Debiasing-row linear program and its warm-started path over lambda.
//!
//! For a contrast `a` the row `m = M'a` solves
//!
//! ```text
//!     minimize |m|_1   subject to   |a - S m|_inf <= lambda
//! ```
//!
//! which is written in standard form with `m = u - v` and slacks:
//!
//! ```text
//!      S u - S v + s1        = a + lambda
//!     -S u + S v        + s2 = lambda - a         u, v, s1, s2 >= 0
//! ```
//!
//! The all-slack basis is dual feasible for every right-hand side, so the
//! problem is solved by a revised dual simplex started from that basis.
//! Shrinking lambda only changes the right-hand side, so the optimal basis of
//! one grid point is a dual-feasible warm start for the next.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{l1, linf};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    s: Array2<f64>,
}

impl GramMatrix {
    pub fn new(s: Array2<f64>) -> Result<Self> {
        let (r, c) = s.dim();
        if r != c || r == 0 {
            return Err(Error::DimensionMismatch(format!(
                "Gram matrix must be square and non-empty, got {r}x{c}"
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gram matrix"));
        }
        for i in 0..r {
            if s[[i, i]] < 0.0 {
                return Err(Error::InvalidInput(format!("negative diagonal entry {i}")));
            }
            for j in 0..i {
                if (s[[i, j]] - s[[j, i]]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "Gram matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(GramMatrix { s })
    }

    /// `S = X'X / n`, symmetrized exactly.
    pub fn from_design(x: &Array2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut s = x.t().dot(x) / n;
        let p = s.nrows();
        for i in 0..p {
            for j in 0..i {
                let v = 0.5 * (s[[i, j]] + s[[j, i]]);
                s[[i, j]] = v;
                s[[j, i]] = v;
            }
        }
        GramMatrix { s }
    }

    pub fn p(&self) -> usize {
        self.s.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.s
    }

    /// `|a - S m|_inf`
    pub fn gap(&self, a: ArrayView1<f64>, m: ArrayView1<f64>) -> f64 {
        let r = &a - &self.s.dot(&m);
        linf(r.as_slice().expect("contiguous"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasRow {
    pub m: Array1<f64>,
    pub lambda: f64,
    /// Achieved `|a - S m|_inf`.
    pub gap: f64,
    /// `|m|_1`
    pub l1: f64,
}

impl DebiasRow {
    pub fn new(s: &GramMatrix, a: ArrayView1<f64>, m: Array1<f64>, lambda: f64) -> Self {
        let gap = s.gap(a, m.view());
        let l1 = l1(m.as_slice().expect("contiguous"));
        DebiasRow { m, lambda, gap, l1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    /// Pivot cap per solve, as a multiple of the number of rows.
    pub max_pivots_per_row: usize,
    /// Rebuild the basis inverse from scratch after this many pivots.
    pub refactor_every: usize,
    pub feas_tol: f64,
    pub pivot_tol: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            max_pivots_per_row: 50,
            refactor_every: 100,
            feas_tol: 1e-11,
            pivot_tol: 1e-7,
        }
    }
}

/// Default lambda grid: 50 geometric points from 1.0 down to 0.01.
pub fn default_grid() -> Vec<f64> {
    geometric_grid(1.0, 0.01, 50)
}

/// Grid in the `alpha sqrt(log p / n)` parameterization: `alpha` runs
/// geometrically from `0.99 / sqrt(log p / n)` down to `0.001`, so lambda
/// spans `0.99` down to `0.001 sqrt(log p / n)`.
pub fn scaled_grid(n: usize, p: usize, count: usize) -> Result<Vec<f64>> {
    if n == 0 || p < 2 {
        return Err(Error::InvalidInput(format!("scaled grid needs n >= 1 and p >= 2, got n = {n}, p = {p}")));
    }
    let rate = ((p as f64).ln() / n as f64).sqrt();
    let lo = 0.001 * rate;
    if lo >= 0.99 {
        return Err(Error::InvalidInput(format!("scaled grid is empty for n = {n}, p = {p}")));
    }
    Ok(geometric_grid(0.99, lo, count))
}

/// `count` geometrically spaced points from `hi` down to `lo`.
pub fn geometric_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![hi],
        _ => {
            let ratio = (lo / hi).ln() / (count - 1) as f64;
            (0..count)
                .map(|k| {
                    if k == count - 1 {
                        lo
                    } else {
                        hi * (ratio * k as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Solution of one LP; `None` marks an infeasible lambda.
pub fn solve_row(s: &GramMatrix, a: ArrayView1<f64>, lambda: f64) -> Result<Option<DebiasRow>> {
    solve_row_with(s, a, lambda, &LpOptions::default())
}

pub fn solve_row_with(
    s: &GramMatrix,
    a: ArrayView1<f64>,
    lambda: f64,
    opts: &LpOptions,
) -> Result<Option<DebiasRow>> {
    check_contrast(s, a)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    let mut lp = DualSimplex::new(s, a, *opts);
    lp.solve_at(lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    /// One row per feasible grid point, in grid order.
    pub rows: Vec<DebiasRow>,
    /// First grid lambda at which the LP was infeasible, if the path stopped early.
    pub infeasible_at: Option<f64>,
    pub pivots: usize,
}

/// Solves along a strictly descending grid in `(0, 1]`, warm-starting every
/// point from the previous optimal basis. Stops at the first infeasible lambda.
pub fn solve_path(s: &GramMatrix, a: ArrayView1<f64>, grid: &[f64]) -> Result<SolutionPath> {
    solve_path_with(s, a, grid, &LpOptions::default())
}

pub fn solve_path_with(
    s: &GramMatrix,
    a: ArrayView1<f64>,
    grid: &[f64],
    opts: &LpOptions,
) -> Result<SolutionPath> {
    check_contrast(s, a)?;
    validate_grid(grid)?;
    let mut lp = DualSimplex::new(s, a, *opts);
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        match lp.solve_at(lambda)? {
            Some(row) => rows.push(row),
            None => {
                return Ok(SolutionPath {
                    rows,
                    infeasible_at: Some(lambda),
                    pivots: lp.total_pivots,
                })
            }
        }
    }
    Ok(SolutionPath {
        rows,
        infeasible_at: None,
        pivots: lp.total_pivots,
    })
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    if grid.iter().any(|l| !(*l > 0.0 && *l <= 1.0)) {
        return Err(Error::InvalidInput("lambda grid values must lie in (0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("lambda grid must be strictly descending".into()));
    }
    Ok(())
}

fn check_contrast(s: &GramMatrix, a: ArrayView1<f64>) -> Result<()> {
    if a.len() != s.p() {
        return Err(Error::DimensionMismatch(format!(
            "contrast has length {} but p = {}",
            a.len(),
            s.p()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("contrast"));
    }
    if a.iter().map(|v| v.abs()).sum::<f64>() <= 0.0 {
        return Err(Error::InvalidInput("contrast must be nonzero".into()));
    }
    Ok(())
}

const HARRIS_TOL: f64 = 1e-9;

/// Parametric dual simplex with an explicit dense basis inverse.
///
/// Standard form: `[S, -S, I; -S, S, I] (m+, m-, slack) = (a, -a) + lambda 1`.
/// The basis stays dual feasible throughout; lambda moves down from
/// `|a|_inf`, and each breakpoint where a basic variable reaches zero costs
/// one dual pivot. A breakpoint with no entering column proves every smaller
/// lambda infeasible.
struct DualSimplex<'a> {
    gram: &'a GramMatrix,
    s: &'a Array2<f64>,
    a: Array1<f64>,
    p: usize,
    opts: LpOptions,
    /// Basic variable of each row.
    basis: Vec<usize>,
    /// Row of each variable if basic.
    row_of: Vec<Option<usize>>,
    /// Row-major `2p x 2p` basis inverse.
    binv: Vec<f64>,
    /// Reduced costs of all `4p` variables.
    d: Vec<f64>,
    /// Basic values at `lambda`.
    xb: Vec<f64>,
    /// `B^-1 1`, the rate of change of `xb` in lambda.
    gamma: Vec<f64>,
    /// Level the current basis is primal feasible at.
    lambda: f64,
    since_refactor: usize,
    total_pivots: usize,
    resets: usize,
}

enum Outcome {
    Optimal,
    Infeasible,
}

impl<'a> DualSimplex<'a> {
    fn new(s: &'a GramMatrix, a: ArrayView1<f64>, opts: LpOptions) -> Self {
        let p = s.p();
        let mut lp = DualSimplex {
            gram: s,
            s: s.matrix(),
            a: a.to_owned(),
            p,
            opts,
            basis: Vec::new(),
            row_of: Vec::new(),
            binv: Vec::new(),
            d: Vec::new(),
            xb: vec![0.0; 2 * p],
            gamma: vec![0.0; 2 * p],
            lambda: linf(a.as_slice().expect("contiguous")),
            since_refactor: 0,
            total_pivots: 0,
            resets: 0,
        };
        lp.reset_to_slacks();
        lp
    }

    fn rows(&self) -> usize {
        2 * self.p
    }

    fn cost(&self, j: usize) -> f64 {
        if j < 2 * self.p {
            1.0
        } else {
            0.0
        }
    }

    /// Dense constraint column of variable `j`.
    fn column(&self, j: usize, out: &mut [f64]) {
        let p = self.p;
        out.iter_mut().for_each(|v| *v = 0.0);
        if j < 2 * p {
            let (k, sign) = if j < p { (j, 1.0) } else { (j - p, -1.0) };
            let col = self.s.column(k);
            for i in 0..p {
                out[i] = sign * col[i];
                out[p + i] = -sign * col[i];
            }
        } else {
            out[j - 2 * p] = 1.0;
        }
    }

    /// `xb = B^-1 (b0 + lambda 1)` and `gamma = B^-1 1` from the inverse.
    fn recompute_xb(&mut self) {
        let m = self.rows();
        let p = self.p;
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let mut base = 0.0;
            let mut rate = 0.0;
            for (k, b) in row.iter().enumerate() {
                let b0 = if k < p { self.a[k] } else { -self.a[k - p] };
                base += b * b0;
                rate += b;
            }
            self.gamma[i] = rate;
            self.xb[i] = base + self.lambda * rate;
        }
    }

    /// `S (x1 - x2)` for a vector split into its two row blocks.
    fn gram_times_split(&self, x: &[f64]) -> Vec<f64> {
        let p = self.p;
        let diff = Array1::from_iter((0..p).map(|i| x[i] - x[p + i]));
        self.s.dot(&diff).to_vec()
    }

    /// Entry `j` of `rho' A` given `w = S (rho1 - rho2)`.
    fn row_entry(&self, j: usize, rho: &[f64], w: &[f64]) -> f64 {
        let p = self.p;
        if j < p {
            w[j]
        } else if j < 2 * p {
            -w[j - p]
        } else {
            rho[j - 2 * p]
        }
    }

    fn recompute_duals(&mut self) {
        let m = self.rows();
        let mut y = vec![0.0; m];
        for (r, &j) in self.basis.iter().enumerate() {
            let c = self.cost(j);
            if c != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (yk, bk) in y.iter_mut().zip(row) {
                    *yk += c * bk;
                }
            }
        }
        let wy = self.gram_times_split(&y);
        for j in 0..4 * self.p {
            self.d[j] = if self.row_of[j].is_some() {
                0.0
            } else {
                self.cost(j) - self.row_entry(j, &y, &wy)
            };
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.rows();
        let mut bmat = vec![0.0; m * m];
        let mut col = vec![0.0; m];
        for (c, &j) in self.basis.iter().enumerate() {
            self.column(j, &mut col);
            for r in 0..m {
                bmat[r * m + c] = col[r];
            }
        }
        match invert(bmat, m) {
            Some(binv) => {
                self.binv = binv;
                self.recompute_duals();
            }
            None => {
                // drift made the basis singular; the slack basis is always
                // dual feasible, so restart from it
                if self.resets >= 3 {
                    return Err(Error::Numerical("singular simplex basis after repeated restarts".into()));
                }
                self.resets += 1;
                self.reset_to_slacks();
            }
        }
        self.since_refactor = 0;
        self.recompute_xb();
        Ok(())
    }

    /// Slack basis, optimal for every `lambda >= |a|_inf`.
    fn reset_to_slacks(&mut self) {
        let p = self.p;
        let m = self.rows();
        self.basis = (2 * p..4 * p).collect();
        self.row_of = vec![None; 4 * p];
        for (r, &j) in self.basis.iter().enumerate() {
            self.row_of[j] = Some(r);
        }
        self.binv = vec![0.0; m * m];
        for i in 0..m {
            self.binv[i * m + i] = 1.0;
        }
        self.d = (0..4 * p).map(|j| self.cost(j)).collect();
        self.lambda = self.lambda.max(linf(self.a.as_slice().expect("contiguous")));
        self.recompute_xb();
    }

    fn dual_objective(&self) -> f64 {
        self.basis
            .iter()
            .zip(&self.xb)
            .map(|(&j, x)| self.cost(j) * x)
            .sum()
    }

    fn solve_at(&mut self, lambda: f64) -> Result<Option<DebiasRow>> {
        let gram = self.gram;
        if lambda >= linf(self.a.as_slice().expect("contiguous")) {
            return Ok(Some(DebiasRow::new(
                gram,
                self.a.view(),
                Array1::zeros(self.p),
                lambda,
            )));
        }
        if lambda > self.lambda {
            // the path only moves down; restart above the target
            self.reset_to_slacks();
        }
        for attempt in 0..4 {
            match self.optimize(lambda)? {
                Outcome::Infeasible => return Ok(None),
                Outcome::Optimal => {
                    let m = self.extract();
                    let row = DebiasRow::new(gram, self.a.view(), m, lambda);
                    if row.gap <= lambda + 5e-9 || attempt == 3 {
                        return Ok(Some(row));
                    }
                    self.refactor()?;
                }
            }
        }
        unreachable!()
    }

    fn extract(&self) -> Array1<f64> {
        let p = self.p;
        let mut m = Array1::zeros(p);
        for (r, &j) in self.basis.iter().enumerate() {
            let x = self.xb[r].max(0.0);
            if j < p {
                m[j] += x;
            } else if j < 2 * p {
                m[j - p] -= x;
            }
        }
        m
    }

    /// Leaving row at the current level: the most infeasible row if any,
    /// else the first row to reach zero as lambda falls towards `target`.
    fn leaving_row(&self, target: f64, bland: bool) -> Option<(usize, f64)> {
        let tol = self.opts.feas_tol;
        let mut infeasible: Option<usize> = None;
        for r in 0..self.rows() {
            if self.xb[r] < -tol {
                let better = match infeasible {
                    None => true,
                    Some(b) if bland => self.basis[r] < self.basis[b],
                    Some(b) => self.xb[r] < self.xb[b],
                };
                if better {
                    infeasible = Some(r);
                }
            }
        }
        if let Some(r) = infeasible {
            return Some((r, self.lambda));
        }
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.rows() {
            let g = self.gamma[r];
            if g <= tol {
                continue;
            }
            // x_r(l) = xb_r - (lambda - l) g reaches zero here
            let hit = self.lambda - self.xb[r].max(0.0) / g;
            if hit <= target {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, h)) => hit > h + 1e-15 || (hit >= h - 1e-15 && self.basis[r] < self.basis[b]),
            };
            if better {
                best = Some((r, hit));
            }
        }
        best
    }

    fn set_level(&mut self, lambda: f64) {
        let shift = lambda - self.lambda;
        for (x, g) in self.xb.iter_mut().zip(&self.gamma) {
            *x += shift * g;
        }
        self.lambda = lambda;
    }

    fn optimize(&mut self, target: f64) -> Result<Outcome> {
        let m = self.rows();
        let nvars = 4 * self.p;
        let cap = self.opts.max_pivots_per_row * m;
        let mut pivots = 0usize;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        let mut col = vec![0.0; m];
        let mut alpha = vec![0.0; nvars];

        loop {
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
            let Some((r, hit)) = self.leaving_row(target, bland) else {
                self.set_level(target);
                return Ok(Outcome::Optimal);
            };
            if pivots >= cap {
                return Err(Error::IterationLimit {
                    iterations: pivots,
                    lower_bound: self.dual_objective(),
                });
            }
            if hit < self.lambda {
                self.set_level(hit);
                self.xb[r] = self.xb[r].min(0.0);
            }

            // pivot row of B^-1 A
            let rho: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let w = self.gram_times_split(&rho);
            // Harris two-pass ratio test: relax the bound slightly, then take
            // the largest pivot within it
            let mut bound = f64::INFINITY;
            for j in 0..nvars {
                if self.row_of[j].is_some() {
                    alpha[j] = 0.0;
                    continue;
                }
                let aj = self.row_entry(j, &rho, &w);
                alpha[j] = aj;
                if aj < -self.opts.pivot_tol {
                    let relax = if bland { 0.0 } else { HARRIS_TOL };
                    bound = bound.min((self.d[j].max(0.0) + relax) / -aj);
                }
            }
            let mut enter: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for j in 0..nvars {
                let aj = alpha[j];
                if self.row_of[j].is_some() || aj >= -self.opts.pivot_tol {
                    continue;
                }
                let ratio = self.d[j].max(0.0) / -aj;
                if ratio > bound + 1e-15 {
                    continue;
                }
                let better = match enter {
                    None => true,
                    // Bland: first index among the minimum ratios
                    Some(_) if bland => ratio < best_ratio - 1e-12,
                    Some(q) => aj.abs() > alpha[q].abs(),
                };
                if better {
                    enter = Some(j);
                    best_ratio = ratio;
                }
            }
            let Some(q) = enter else {
                if self.since_refactor > 0 {
                    // confirm on a fresh factorization before declaring infeasibility
                    self.refactor()?;
                    continue;
                }
                return Ok(Outcome::Infeasible);
            };

            if best_ratio <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > 50 {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }

            // entering column B^-1 A_q
            self.column(q, &mut col);
            let bcol: Vec<f64> = (0..m)
                .map(|i| {
                    self.binv[i * m..(i + 1) * m]
                        .iter()
                        .zip(&col)
                        .map(|(b, c)| b * c)
                        .sum()
                })
                .collect();
            let piv = bcol[r];
            if (piv.abs() < self.opts.pivot_tol || (piv - alpha[q]).abs() > 1e-7 * (1.0 + piv.abs()))
                && self.since_refactor > 0
            {
                self.refactor()?;
                continue;
            }

            // primal update, for both the level and its rate in lambda
            let theta = self.xb[r] / piv;
            let theta_g = self.gamma[r] / piv;
            for i in 0..m {
                self.xb[i] -= theta * bcol[i];
                self.gamma[i] -= theta_g * bcol[i];
            }
            self.xb[r] = theta;
            self.gamma[r] = theta_g;

            // dual update
            let t = self.d[q].max(0.0) / alpha[q];
            for j in 0..nvars {
                if self.row_of[j].is_none() {
                    self.d[j] -= t * alpha[j];
                }
            }
            let leaving = self.basis[r];
            self.d[q] = 0.0;
            self.d[leaving] = -t;

            // basis inverse update
            let (head, tail) = self.binv.split_at_mut(r * m);
            let (pivot_row, tail) = tail.split_at_mut(m);
            for v in pivot_row.iter_mut() {
                *v /= piv;
            }
            for (i, row) in head.chunks_exact_mut(m).enumerate() {
                let f = bcol[i];
                if f != 0.0 {
                    for (x, pr) in row.iter_mut().zip(pivot_row.iter()) {
                        *x -= f * pr;
                    }
                }
            }
            for (k, row) in tail.chunks_exact_mut(m).enumerate() {
                let f = bcol[r + 1 + k];
                if f != 0.0 {
                    for (x, pr) in row.iter_mut().zip(pivot_row.iter()) {
                        *x -= f * pr;
                    }
                }
            }

            self.row_of[leaving] = None;
            self.row_of[q] = Some(r);
            self.basis[r] = q;
            self.since_refactor += 1;
            self.total_pivots += 1;
            pivots += 1;
        }
    }
}

/// Gauss-Jordan inverse with partial pivoting of a row-major `m x m` matrix.
fn invert(mut a: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    for c in 0..m {
        let piv = (c..m).max_by(|&x, &y| a[x * m + c].abs().total_cmp(&a[y * m + c].abs()))?;
        if a[piv * m + c].abs() < 1e-14 {
            return None;
        }
        if piv != c {
            for k in 0..m {
                a.swap(piv * m + k, c * m + k);
                inv.swap(piv * m + k, c * m + k);
            }
        }
        let d = a[c * m + c];
        for k in 0..m {
            a[c * m + k] /= d;
            inv[c * m + k] /= d;
        }
        for r in 0..m {
            if r == c {
                continue;
            }
            let f = a[r * m + c];
            if f != 0.0 {
                for k in 0..m {
                    a[r * m + k] -= f * a[c * m + k];
                    inv[r * m + k] -= f * inv[c * m + k];
                }
            }
        }
    }
    Some(inv)
}
