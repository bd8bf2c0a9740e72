//! Slow, independent reference implementations used as test oracles.
#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rrhdi::{Dataset, GroupAction};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(r))
}

pub fn gaussian_vec(r: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(r))
}

/// Sparse Gaussian regression with unit noise.
pub fn sparse_instance(r: &mut ChaCha8Rng, n: usize, p: usize, s: usize) -> Dataset {
    let x = gaussian(r, n, p);
    let mut beta = Array1::zeros(p);
    for j in 0..s.min(p) {
        beta[j] = if r.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    let y = x.dot(&beta) + gaussian_vec(r, n);
    Dataset::new(x, y).unwrap()
}

/// `n x p` design with `X'X/n = I`, by modified Gram-Schmidt run twice.
pub fn orthonormal_design(r: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    assert!(p <= n);
    let mut q = gaussian(r, n, p);
    for _ in 0..2 {
        for j in 0..p {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let ck = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-proj, &ck);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
    }
    q * (n as f64).sqrt()
}

// ---------- Lasso references ----------

fn power_lmax(s: &Array2<f64>) -> f64 {
    let p = s.nrows();
    let mut v = Array1::from_elem(p, 1.0 / (p as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..2000 {
        let w = s.dot(&v);
        let nw = w.dot(&w).sqrt();
        if nw == 0.0 {
            return 0.0;
        }
        lam = nw;
        v = w / nw;
    }
    lam
}

fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

/// FISTA with adaptive restart on `(1/2n)|y - X b|^2 + lambda |b|_1`.
pub fn lasso_reference(data: &Dataset, lambda: f64, iters: usize) -> Array1<f64> {
    let n = data.n() as f64;
    let s = data.x.t().dot(&data.x) / n;
    let c = data.x.t().dot(&data.y) / n;
    let step = 1.0 / (power_lmax(&s) * 1.001).max(1e-12);
    let p = data.p();
    let mut b: Array1<f64> = Array1::zeros(p);
    let mut z = b.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad = s.dot(&z) - &c;
        let next = Array1::from_shape_fn(p, |j| soft(z[j] - step * grad[j], step * lambda));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let diff = &next - &b;
        // restart momentum when it points uphill
        if (&z - &next).dot(&diff) > 0.0 {
            t = 1.0;
            z = next.clone();
        } else {
            z = &next + &(diff * ((t - 1.0) / t_next));
            t = t_next;
        }
        b = next;
    }
    b
}

/// Square-root Lasso on an orthonormal design: `beta_j = soft(z_j, lambda sigma)`
/// where `sigma` solves `sigma^2 = c0 + sum_j min(|z_j|, lambda sigma)^2`,
/// found by bisection.
pub fn sqrt_lasso_orthonormal(data: &Dataset, lambda: f64) -> Array1<f64> {
    let n = data.n() as f64;
    let z = data.x.t().dot(&data.y) / n;
    let c0 = data.y.dot(&data.y) / n - z.dot(&z);
    let f = |sig: f64| {
        sig * sig - c0 - z.iter().map(|zj| zj.abs().min(lambda * sig).powi(2)).sum::<f64>()
    };
    let (mut lo, mut hi) = (0.0, (data.y.dot(&data.y) / n).sqrt() + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let sigma = 0.5 * (lo + hi);
    z.mapv(|zj| soft(zj, lambda * sigma))
}

// ---------- LP references ----------

#[derive(Debug, Clone, PartialEq)]
pub enum Lp {
    Optimal(f64),
    Infeasible,
    Unbounded,
}

const EPS: f64 = 1e-10;

/// Dense-tableau two-phase primal simplex with Bland's rule for
/// `min c'x s.t. A x = b, x >= 0`.
pub fn simplex_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Lp {
    let m = a.len();
    let nv = c.len();
    let width = nv + m + 1;
    let mut t = vec![vec![0.0; width]; m];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..nv {
            t[i][j] = sign * a[i][j];
        }
        t[i][nv + i] = 1.0;
        t[i][width - 1] = sign * b[i];
    }
    let mut basis: Vec<usize> = (nv..nv + m).collect();

    let mut phase1 = vec![0.0; nv + m];
    for v in phase1.iter_mut().skip(nv) {
        *v = 1.0;
    }
    if run_bland(&mut t, &mut basis, &phase1, nv + m).is_err() {
        return Lp::Unbounded;
    }
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= nv)
        .map(|(i, _)| t[i][width - 1])
        .sum();
    if infeas > 1e-8 {
        return Lp::Infeasible;
    }
    // drive zero-level artificials out where possible
    for i in 0..m {
        if basis[i] >= nv {
            if let Some(j) = (0..nv).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }
    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, m));
    match run_bland(&mut t, &mut basis, &phase2, nv) {
        Err(()) => Lp::Unbounded,
        Ok(()) => {
            let mut x = vec![0.0; nv + m];
            for (i, &j) in basis.iter().enumerate() {
                x[j] = t[i][width - 1];
            }
            Lp::Optimal((0..nv).map(|j| c[j] * x[j]).sum())
        }
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, col: usize) {
    let pv = t[r][col];
    for v in t[r].iter_mut() {
        *v /= pv;
    }
    let prow = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i != r {
            let f = row[col];
            if f != 0.0 {
                for (v, pr) in row.iter_mut().zip(&prow) {
                    *v -= f * pr;
                }
            }
        }
    }
    basis[r] = col;
}

/// Columns `>= enter_limit` never enter.
fn run_bland(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], enter_limit: usize) -> Result<(), ()> {
    let m = t.len();
    let rhs = t[0].len() - 1;
    for _ in 0..100_000 {
        let reduced = |j: usize, t: &[Vec<f64>]| -> f64 {
            cost[j] - (0..m).map(|i| cost[basis[i]] * t[i][j]).sum::<f64>()
        };
        let Some(col) = (0..enter_limit).find(|&j| !basis.contains(&j) && reduced(j, t) < -EPS) else {
            return Ok(());
        };
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][col] > EPS {
                let ratio = t[i][rhs] / t[i][col];
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br - 1e-12 || ((ratio - br).abs() <= 1e-12 && basis[i] < basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
        }
        let Some((r, _)) = best else { return Err(()) };
        pivot(t, basis, r, col);
    }
    panic!("reference simplex did not terminate");
}

/// Standard form of `min |m|_1 s.t. |a - S m|_inf <= lambda`:
/// variables `[m+, m-, s1, s2]`.
pub fn clime_standard_form(s: &Array2<f64>, a: ArrayView1<f64>, lambda: f64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let p = s.nrows();
    let mut rows = Vec::with_capacity(2 * p);
    let mut b = Vec::with_capacity(2 * p);
    for i in 0..p {
        let mut r = vec![0.0; 4 * p];
        for j in 0..p {
            r[j] = s[[i, j]];
            r[p + j] = -s[[i, j]];
        }
        r[2 * p + i] = 1.0;
        rows.push(r);
        b.push(a[i] + lambda);
    }
    for i in 0..p {
        let mut r = vec![0.0; 4 * p];
        for j in 0..p {
            r[j] = -s[[i, j]];
            r[p + j] = s[[i, j]];
        }
        r[3 * p + i] = 1.0;
        rows.push(r);
        b.push(lambda - a[i]);
    }
    let mut c = vec![1.0; 2 * p];
    c.extend(std::iter::repeat_n(0.0, 2 * p));
    (rows, b, c)
}

pub fn clime_oracle(s: &Array2<f64>, a: ArrayView1<f64>, lambda: f64) -> Lp {
    let (rows, b, c) = clime_standard_form(s, a, lambda);
    simplex_min(&rows, &b, &c)
}

pub fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let k = m.len();
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for i in 0..k {
            if i != col {
                let f = m[i][col] / m[col][col];
                if f != 0.0 {
                    for j in col..k {
                        m[i][j] -= f * m[col][j];
                    }
                    rhs[i] -= f * rhs[col];
                }
            }
        }
    }
    Some((0..k).map(|i| rhs[i] / m[i][i]).collect())
}

/// Minimum of `c'x` over all basic feasible solutions of `A x = b, x >= 0`.
pub fn vertex_enumeration(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<f64> {
    let m = a.len();
    let nv = c.len();
    let mut best: Option<f64> = None;
    let mut cols: Vec<usize> = (0..m).collect();
    loop {
        let sub: Vec<Vec<f64>> = (0..m).map(|i| cols.iter().map(|&j| a[i][j]).collect()).collect();
        if let Some(x) = solve_dense(sub, b.to_vec()) {
            if x.iter().all(|v| *v >= -1e-9) {
                let obj: f64 = cols.iter().zip(&x).map(|(&j, v)| c[j] * v).sum();
                best = Some(best.map_or(obj, |bv: f64| bv.min(obj)));
            }
        }
        // next m-subset in lexicographic order
        let mut k = m;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if cols[k] < nv - m + k {
                break;
            }
        }
        cols[k] += 1;
        for i in k + 1..m {
            cols[i] = cols[i - 1] + 1;
        }
    }
}

/// Random symmetric positive definite matrix with unit-scale spectrum.
pub fn random_spd(r: &mut ChaCha8Rng, p: usize) -> Array2<f64> {
    let z = gaussian(r, 2 * p, p);
    let mut s = z.t().dot(&z) / (2 * p) as f64;
    for i in 0..p {
        s[[i, i]] += 0.1;
    }
    for i in 0..p {
        for j in 0..i {
            s[[j, i]] = s[[i, j]];
        }
    }
    s
}

// ---------- group-action references ----------

/// Dense matrix of an action: `(G)_{i, g(i)} = 1` or `diag(s)`.
pub fn dense_action(g: &GroupAction) -> Array2<f64> {
    let n = g.len();
    let mut out = Array2::zeros((n, n));
    match g {
        GroupAction::Exchange(perm) | GroupAction::Cluster(perm) => {
            for (i, &j) in perm.iter().enumerate() {
                out[[i, j]] = 1.0;
            }
        }
        GroupAction::Sign(s) => {
            for (i, &si) in s.iter().enumerate() {
                out[[i, i]] = si as f64;
            }
        }
    }
    out
}

pub fn dense_cross_moment(x: &Array2<f64>, g: &GroupAction) -> f64 {
    let prod = x.t().dot(&dense_action(g)).dot(x) / x.nrows() as f64;
    prod.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
