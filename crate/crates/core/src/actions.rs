//! Error-invariance group actions: balanced pair-swap permutations, balanced
//! sign flips and within-cluster pair swaps.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// Disjoint clusters covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    clusters: Vec<Vec<usize>>,
    n: usize,
}

impl Partition {
    pub fn new(clusters: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for (k, c) in clusters.iter().enumerate() {
            for &i in c {
                if i >= n {
                    return Err(Error::InvalidInput(format!(
                        "cluster {k} contains index {i} outside 0..{n}"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidInput(format!(
                        "index {i} appears in more than one cluster"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!("index {i} belongs to no cluster")));
        }
        Ok(Partition { clusters, n })
    }

    /// Clusters in order of first appearance of each label.
    pub fn from_labels<L: Eq + Hash + Clone>(labels: &[L]) -> Result<Self> {
        let mut index: HashMap<L, usize> = HashMap::new();
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            let k = *index.entry(l.clone()).or_insert_with(|| {
                clusters.push(Vec::new());
                clusters.len() - 1
            });
            clusters[k].push(i);
        }
        Partition::new(clusters, labels.len())
    }

    /// Consecutive blocks of `size` observations.
    pub fn blocks(n: usize, size: usize) -> Result<Self> {
        if size == 0 || !n.is_multiple_of(size) {
            return Err(Error::InvalidInput(format!(
                "cluster size {size} does not divide n = {n}"
            )));
        }
        Partition::new(
            (0..n / size).map(|k| (k * size..(k + 1) * size).collect()).collect(),
            n,
        )
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Invariance {
    Exchange,
    Sign,
    Cluster(Arc<Partition>),
}

impl Invariance {
    pub fn name(&self) -> &'static str {
        match self {
            Invariance::Exchange => "exchange",
            Invariance::Sign => "sign",
            Invariance::Cluster(_) => "cluster",
        }
    }
}

/// One map `G` with `G eps` equal in distribution to `eps`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GroupAction {
    /// `(G v)_i = v_{g(i)}`, a product of swaps between two equal halves.
    Exchange(Vec<usize>),
    /// `(G v)_i = s_i v_i` with balanced signs.
    Sign(Vec<i8>),
    /// Global permutation made of within-cluster pair swaps.
    Cluster(Vec<usize>),
}

impl GroupAction {
    pub fn len(&self) -> usize {
        match self {
            GroupAction::Exchange(g) | GroupAction::Cluster(g) => g.len(),
            GroupAction::Sign(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_len(v.len())?;
        Ok(match self {
            GroupAction::Exchange(g) | GroupAction::Cluster(g) => {
                Array1::from_iter(g.iter().map(|&j| v[j]))
            }
            GroupAction::Sign(s) => {
                Array1::from_iter(s.iter().zip(v.iter()).map(|(&si, &vi)| si as f64 * vi))
            }
        })
    }

    /// `G' v`
    pub fn apply_transpose(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_len(v.len())?;
        Ok(match self {
            GroupAction::Exchange(g) | GroupAction::Cluster(g) => {
                let mut out = Array1::zeros(v.len());
                for (i, &j) in g.iter().enumerate() {
                    out[j] = v[i];
                }
                out
            }
            GroupAction::Sign(_) => self.apply(v)?,
        })
    }

    /// `w' (G v)` without materializing `G v`.
    pub(crate) fn dot(&self, w: &[f64], v: &[f64]) -> f64 {
        match self {
            GroupAction::Exchange(g) | GroupAction::Cluster(g) => {
                g.iter().zip(w).map(|(&j, wi)| wi * v[j]).sum()
            }
            GroupAction::Sign(s) => s
                .iter()
                .zip(w.iter().zip(v))
                .map(|(&si, (wi, vi))| si as f64 * wi * vi)
                .sum(),
        }
    }

    /// Rows of `G X`.
    pub fn apply_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_len(x.nrows())?;
        Ok(match self {
            GroupAction::Exchange(g) | GroupAction::Cluster(g) => x.select(Axis(0), g),
            GroupAction::Sign(s) => {
                let mut out = x.to_owned();
                for (mut row, &si) in out.axis_iter_mut(Axis(0)).zip(s) {
                    if si < 0 {
                        row.mapv_inplace(|v| -v);
                    }
                }
                out
            }
        })
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "action acts on length {} but got {}",
                self.len(),
                n
            )));
        }
        Ok(())
    }

    /// Structural check of the action against its family.
    pub fn is_valid(&self, partition: Option<&Partition>) -> bool {
        match self {
            GroupAction::Exchange(g) => is_balanced_cross_permutation(g),
            GroupAction::Sign(s) => is_balanced_sign(s),
            GroupAction::Cluster(g) => match partition {
                Some(part) => is_cluster_permutation(g, part),
                None => false,
            },
        }
    }
}

/// True when `g` is a permutation and `[n]` splits into equal halves with
/// `g` mapping each half into the other, i.e. every cycle of `g` has even
/// length.
pub fn is_balanced_cross_permutation(g: &[usize]) -> bool {
    let n = g.len();
    if n == 0 || !n.is_multiple_of(2) {
        return false;
    }
    let mut hit = vec![false; n];
    for &j in g {
        if j >= n || hit[j] {
            return false;
        }
        hit[j] = true;
    }
    let mut visited = vec![false; n];
    for start in 0..n {
        if visited[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !visited[i] {
            visited[i] = true;
            i = g[i];
            len += 1;
        }
        if len % 2 != 0 {
            return false;
        }
    }
    true
}

pub fn is_balanced_sign(s: &[i8]) -> bool {
    !s.is_empty()
        && s.len().is_multiple_of(2)
        && s.iter().all(|&v| v == 1 || v == -1)
        && s.iter().map(|&v| v as i64).sum::<i64>() == 0
}

pub fn is_cluster_permutation(g: &[usize], part: &Partition) -> bool {
    if g.len() != part.n() {
        return false;
    }
    part.clusters().iter().all(|c| {
        let local: HashMap<usize, usize> = c.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut sub = Vec::with_capacity(c.len());
        for &i in c {
            match local.get(&g[i]) {
                Some(&k) => sub.push(k),
                None => return false,
            }
        }
        is_balanced_cross_permutation(&sub)
    })
}

/// A sampled collection of actions of one family. Draws are with
/// replacement, so duplicates are possible and counted.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupActionSet {
    pub invariance: Invariance,
    pub actions: Vec<GroupAction>,
    pub seed: u64,
}

impl GroupActionSet {
    pub fn count(&self) -> usize {
        self.actions.len()
    }

    pub fn n(&self) -> usize {
        self.actions.first().map_or(0, |a| a.len())
    }

    pub fn sample(invariance: &Invariance, n: usize, count: usize, seed: u64) -> Result<Self> {
        match invariance {
            Invariance::Exchange => sample_exchange(n, count, seed),
            Invariance::Sign => sample_sign(n, count, seed),
            Invariance::Cluster(part) => {
                if part.n() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "partition covers {} observations but n = {n}",
                        part.n()
                    )));
                }
                sample_cluster(part.clone(), count, seed)
            }
        }
    }

    pub fn all_valid(&self) -> bool {
        let part = match &self.invariance {
            Invariance::Cluster(p) => Some(p.as_ref()),
            _ => None,
        };
        self.actions.iter().all(|a| a.is_valid(part))
    }
}

fn check_count(count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidInput("need at least one group action".into()));
    }
    Ok(())
}

fn check_even(n: usize) -> Result<()> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::OddSampleSize(n));
    }
    Ok(())
}

/// Random equal split of `members` matched pairwise across the halves,
/// written into the global permutation `g`.
fn pair_swaps(members: &[usize], g: &mut [usize], rng: &mut ChaCha8Rng) {
    let mut order = members.to_vec();
    order.shuffle(rng);
    let half = order.len() / 2;
    for k in 0..half {
        let (i, j) = (order[k], order[half + k]);
        g[i] = j;
        g[j] = i;
    }
}

pub fn sample_exchange(n: usize, count: usize, seed: u64) -> Result<GroupActionSet> {
    check_even(n)?;
    check_count(count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..n).collect();
    let actions = (0..count)
        .map(|_| {
            let mut g = vec![0; n];
            pair_swaps(&all, &mut g, &mut rng);
            GroupAction::Exchange(g)
        })
        .collect();
    Ok(GroupActionSet {
        invariance: Invariance::Exchange,
        actions,
        seed,
    })
}

pub fn sample_sign(n: usize, count: usize, seed: u64) -> Result<GroupActionSet> {
    check_even(n)?;
    check_count(count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base: Vec<i8> = (0..n).map(|i| if i < n / 2 { 1 } else { -1 }).collect();
    let actions = (0..count)
        .map(|_| {
            base.shuffle(&mut rng);
            GroupAction::Sign(base.clone())
        })
        .collect();
    Ok(GroupActionSet {
        invariance: Invariance::Sign,
        actions,
        seed,
    })
}

pub fn sample_cluster(partition: Arc<Partition>, count: usize, seed: u64) -> Result<GroupActionSet> {
    check_count(count)?;
    for (index, c) in partition.clusters().iter().enumerate() {
        if c.len() <= 2 || c.len() % 2 != 0 {
            return Err(Error::BadCluster {
                index,
                size: c.len(),
            });
        }
    }
    let n = partition.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = (0..count)
        .map(|_| {
            let mut g = vec![0; n];
            for c in partition.clusters() {
                pair_swaps(c, &mut g, &mut rng);
            }
            GroupAction::Cluster(g)
        })
        .collect();
    Ok(GroupActionSet {
        invariance: Invariance::Cluster(partition),
        actions,
        seed,
    })
}

/// Columns of the left factor processed per tile once `n p` exceeds the
/// dense threshold.
const DENSE_LIMIT: usize = 10_000_000;

/// `|X' G X / n|_inf`, accumulated over column tiles of the left factor.
pub fn cross_moment(x: ArrayView2<f64>, action: &GroupAction) -> Result<f64> {
    let (n, p) = x.dim();
    let gx = action.apply_rows(x)?;
    let tile = if n * p <= DENSE_LIMIT {
        p
    } else {
        (DENSE_LIMIT / n.max(1) / 8).clamp(1, p)
    };
    let mut best = 0.0f64;
    let mut c0 = 0;
    while c0 < p {
        let c1 = (c0 + tile).min(p);
        let block = x.slice(s![.., c0..c1]).t().dot(&gx);
        best = block.iter().fold(best, |m, v| m.max(v.abs()));
        c0 = c1;
    }
    Ok(best / n as f64)
}

/// Mean of [`cross_moment`] over the set.
pub fn mean_cross_moment(x: ArrayView2<f64>, set: &GroupActionSet, exec: Execution) -> Result<f64> {
    let per = exec::map_slice(exec, &set.actions, |a| cross_moment(x, a));
    let mut total = 0.0;
    for v in per {
        total += v?;
    }
    Ok(total / set.count() as f64)
}
