//! Synthetic data generators and the coverage campaign runner.
//!
//! Each replication draws its own seeds from the campaign seed, so a
//! campaign can run in any order, in parallel, or resume from a journal
//! of finished replications and still produce the same report.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::actions::{GroupActionSet, Invariance, Partition};
use crate::clime;
use crate::data::Dataset;
use crate::diagnostics::{ar1_covariance, ar1_precision, OracleContext};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::inference::{InferenceConfig, Penalty, PreparedModel};
use crate::lasso::LassoOptions;
use crate::selection::{SelectionConfig, SelectionMode, DEFAULT_DELTA};

/// Toeplitz correlation of the NT and GT settings.
pub const AR1_RHO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovariateSetting {
    N1,
    G1,
    N2,
    NT,
    GT,
    WB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorSetting {
    N1,
    G1,
    N2,
    WB,
    HN,
    HM,
}

macro_rules! setting_names {
    ($ty:ty, $($v:ident),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_uppercase().as_str() {
                    $(stringify!($v) => Ok(<$ty>::$v),)+
                    _ => Err(Error::Config(format!("unknown setting '{s}'"))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self { $(<$ty>::$v => stringify!($v),)+ };
                f.write_str(name)
            }
        }
    };
}

setting_names!(CovariateSetting, N1, G1, N2, NT, GT, WB);
setting_names!(ErrorSetting, N1, G1, N2, WB, HN, HM);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvarianceKind {
    Exchange,
    Sign,
    Cluster,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `stream` of replication `index`.
pub fn derive_seed(base: u64, index: u64, stream: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ index) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

fn centered_weibull(r: &mut ChaCha8Rng) -> f64 {
    // mean of Weibull(scale 1, shape 1/2) is Gamma(3) = 2
    let w = Weibull::new(1.0, 0.5).expect("valid parameters");
    w.sample(r) - 2.0
}

fn centered_gamma(r: &mut ChaCha8Rng) -> f64 {
    let g = Gamma::new(1.0, 1.0).expect("valid parameters");
    g.sample(r) - 1.0
}

fn normal_mixture(r: &mut ChaCha8Rng, sd: f64) -> f64 {
    let mu = if r.random_bool(0.5) { 2.0 } else { -2.0 };
    let z: f64 = StandardNormal.sample(r);
    mu + sd * z
}

/// Row-wise AR(1) draws with unit marginal variance.
fn ar1_rows(r: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    let innov = (1.0 - AR1_RHO * AR1_RHO).sqrt();
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        let mut prev: f64 = StandardNormal.sample(r);
        x[[i, 0]] = prev;
        for j in 1..p {
            let z: f64 = StandardNormal.sample(r);
            prev = AR1_RHO * prev + innov * z;
            x[[i, j]] = prev;
        }
    }
    x
}

pub fn gen_covariates(setting: CovariateSetting, n: usize, p: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput(format!("empty design {n} x {p}")));
    }
    let mut r = rng(seed);
    let x = match setting {
        CovariateSetting::N1 => Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut r)),
        CovariateSetting::G1 => Array2::from_shape_simple_fn((n, p), || centered_gamma(&mut r)),
        CovariateSetting::N2 => Array2::from_shape_simple_fn((n, p), || normal_mixture(&mut r, 1.0)),
        CovariateSetting::WB => Array2::from_shape_simple_fn((n, p), || centered_weibull(&mut r)),
        CovariateSetting::NT => ar1_rows(&mut r, n, p),
        CovariateSetting::GT => {
            // Gaussian copula onto Exp(1) = Gamma(1, 1), then centered
            let std = Normal::standard();
            ar1_rows(&mut r, n, p).mapv(|z| -std.cdf(-z).ln() - 1.0)
        }
    };
    Ok(x)
}

pub fn gen_errors(setting: ErrorSetting, x: &Array2<f64>, seed: u64) -> Result<Array1<f64>> {
    let (n, p) = x.dim();
    let mut r = rng(seed);
    let eps = match setting {
        ErrorSetting::N1 => Array1::from_shape_simple_fn(n, || StandardNormal.sample(&mut r)),
        ErrorSetting::G1 => Array1::from_shape_simple_fn(n, || centered_gamma(&mut r)),
        ErrorSetting::N2 => Array1::from_shape_simple_fn(n, || normal_mixture(&mut r, 1.0)),
        ErrorSetting::WB => Array1::from_shape_simple_fn(n, || centered_weibull(&mut r)),
        ErrorSetting::HN | ErrorSetting::HM => {
            if p == 0 {
                return Err(Error::InvalidInput("heteroskedastic errors need covariates".into()));
            }
            let mut e = Array1::zeros(n);
            for (i, row) in x.rows().into_iter().enumerate() {
                let sd = (2.0 * row.dot(&row) / p as f64).sqrt();
                let z: f64 = StandardNormal.sample(&mut r);
                e[i] = if setting == ErrorSetting::HM {
                    let mu = if r.random_bool(0.5) { 2.0 } else { -2.0 };
                    mu + sd * z
                } else {
                    sd * z
                };
            }
            e
        }
    };
    Ok(eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighborhood {
    Isolated,
    Adjacent,
    Sandwiched,
}

/// Placement class of a coordinate.
///
/// Active coordinates are isolated, adjacent or sandwiched when 0, 1 or 2 of
/// their neighbours are active. Inactive ones mirror this: isolated when both
/// neighbours are active, sandwiched when neither is. Positions outside
/// `0..p` count as inactive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoordClass {
    pub active: bool,
    pub place: Neighborhood,
}

impl CoordClass {
    pub const ALL: [CoordClass; 6] = [
        CoordClass { active: true, place: Neighborhood::Isolated },
        CoordClass { active: true, place: Neighborhood::Adjacent },
        CoordClass { active: true, place: Neighborhood::Sandwiched },
        CoordClass { active: false, place: Neighborhood::Isolated },
        CoordClass { active: false, place: Neighborhood::Adjacent },
        CoordClass { active: false, place: Neighborhood::Sandwiched },
    ];

    pub fn name(&self) -> String {
        let place = match self.place {
            Neighborhood::Isolated => "isolated",
            Neighborhood::Adjacent => "adjacent",
            Neighborhood::Sandwiched => "sandwiched",
        };
        format!("{}-{place}", if self.active { "active" } else { "inactive" })
    }
}

pub fn classify(beta: &Array1<f64>) -> Vec<CoordClass> {
    let p = beta.len();
    let on = |j: isize| j >= 0 && (j as usize) < p && beta[j as usize] != 0.0;
    (0..p)
        .map(|j| {
            let k = on(j as isize - 1) as u8 + on(j as isize + 1) as u8;
            let active = beta[j] != 0.0;
            let place = match (active, k) {
                (true, 0) | (false, 2) => Neighborhood::Isolated,
                (_, 1) => Neighborhood::Adjacent,
                _ => Neighborhood::Sandwiched,
            };
            CoordClass { active, place }
        })
        .collect()
}

/// Active positions of the placement template.
///
/// The support is split into triples and singletons, with
/// `floor((s - 1) / 3)` triples and the rest singletons (one triple and one
/// singleton at `s = 4`, four triples and three singletons at `s = 15`).
/// Blocks start at index 2 and alternate triple, singleton; the first two
/// blocks are one index apart and later gaps are three indices wide.
pub fn beta_template(p: usize, s: usize) -> Result<Vec<usize>> {
    if s == 0 {
        return Err(Error::InvalidInput("sparsity must be positive".into()));
    }
    let triples = (s - 1) / 3;
    let singles = s - 3 * triples;
    let mut blocks = Vec::with_capacity(triples + singles);
    let (mut t, mut g) = (triples, singles);
    while t + g > 0 {
        if t > 0 {
            blocks.push(3);
            t -= 1;
        }
        if g > 0 {
            blocks.push(1);
            g -= 1;
        }
    }
    let mut pos = Vec::with_capacity(s);
    let mut at = 2;
    for (k, len) in blocks.iter().enumerate() {
        if k == 1 {
            at += 1;
        } else if k > 1 {
            at += 3;
        }
        pos.extend(at..at + len);
        at += len;
    }
    if at + 2 > p {
        return Err(Error::InvalidInput(format!(
            "p = {p} is too small for the s = {s} template (needs {})",
            at + 2
        )));
    }
    Ok(pos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaDesign {
    pub beta: Array1<f64>,
    pub classes: Vec<CoordClass>,
}

/// Template support with Rademacher signs.
pub fn gen_beta(p: usize, s: usize, seed: u64) -> Result<BetaDesign> {
    let pos = beta_template(p, s)?;
    let mut r = rng(seed);
    let mut beta = Array1::zeros(p);
    for j in pos {
        beta[j] = if r.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    let classes = classify(&beta);
    Ok(BetaDesign { beta, classes })
}

/// One synthetic regression with its ground truth.
#[derive(Debug, Clone)]
pub struct Instance {
    pub data: Dataset,
    pub oracle: OracleContext,
}

/// Draws `X`, standardizes it if asked, then forms `y = X beta + eps`, so
/// `beta` is the true coefficient of the design actually analysed.
pub fn gen_instance(
    covariates: CovariateSetting,
    errors: ErrorSetting,
    beta: &Array1<f64>,
    n: usize,
    standardize: bool,
    seed: u64,
) -> Result<Instance> {
    let p = beta.len();
    let x = gen_covariates(covariates, n, p, derive_seed(seed, 0, 0))?;
    let mut data = Dataset::new(x, Array1::zeros(n))?;
    if standardize {
        data = data.standardize()?;
    }
    let eps = gen_errors(errors, &data.x, derive_seed(seed, 0, 1))?;
    data.y = data.x.dot(beta) + &eps;
    let mut oracle = OracleContext::new(beta.clone(), eps);
    if !standardize && matches!(covariates, CovariateSetting::NT) {
        oracle.sigma = Some(ar1_covariance(p, AR1_RHO));
        oracle.sigma_inv = Some(ar1_precision(p, AR1_RHO));
    }
    Ok(Instance { data, oracle })
}

fn default_s() -> usize {
    4
}
fn default_replications() -> usize {
    200
}
fn default_actions() -> usize {
    1000
}
fn default_level() -> f64 {
    0.95
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_true() -> bool {
    true
}
fn default_per_class() -> usize {
    2
}
fn default_invariance() -> InvarianceKind {
    InvarianceKind::Exchange
}

/// Campaign parameters; the TOML form uses these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_s")]
    pub s: usize,
    pub covariates: CovariateSetting,
    pub errors: ErrorSetting,
    #[serde(default = "default_invariance")]
    pub invariance: InvarianceKind,
    /// Block size of the cluster partition when `invariance = "cluster"`.
    #[serde(default)]
    pub cluster_size: Option<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_actions")]
    pub actions: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub selection: SelectionMode,
    #[serde(default)]
    pub delta1: Option<f64>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// Monitored coordinates per placement class.
    #[serde(default = "default_per_class")]
    pub per_class: usize,
}

impl SimConfig {
    pub fn new(n: usize, p: usize, covariates: CovariateSetting, errors: ErrorSetting) -> Self {
        SimConfig {
            n,
            p,
            s: default_s(),
            covariates,
            errors,
            invariance: default_invariance(),
            cluster_size: None,
            replications: default_replications(),
            actions: default_actions(),
            level: default_level(),
            seed: 0,
            delta: default_delta(),
            selection: SelectionMode::default(),
            delta1: None,
            standardize: true,
            per_class: default_per_class(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let hetero = matches!(self.errors, ErrorSetting::HN | ErrorSetting::HM);
        let skewed = matches!(self.errors, ErrorSetting::G1 | ErrorSetting::WB);
        match self.invariance {
            InvarianceKind::Exchange | InvarianceKind::Cluster if hetero => {
                return Err(Error::Config(format!(
                    "{} invariance excludes heteroskedastic errors (HN, HM)",
                    if self.invariance == InvarianceKind::Exchange { "exchange" } else { "cluster" }
                )));
            }
            InvarianceKind::Sign if skewed => {
                return Err(Error::Config("sign invariance excludes asymmetric errors (G1, WB)".into()));
            }
            _ => {}
        }
        match (self.invariance, self.cluster_size) {
            (InvarianceKind::Cluster, None) => {
                return Err(Error::Config("cluster invariance needs cluster_size".into()))
            }
            (InvarianceKind::Cluster, Some(k)) if k < 4 || k % 2 != 0 || !self.n.is_multiple_of(k) => {
                return Err(Error::Config(format!(
                    "cluster_size {k} must be even, at least 4 and divide n = {}",
                    self.n
                )))
            }
            (InvarianceKind::Exchange | InvarianceKind::Sign, Some(_)) => {
                return Err(Error::Config("cluster_size is only valid with cluster invariance".into()))
            }
            _ => {}
        }
        if self.n < 4 || !self.n.is_multiple_of(2) {
            return Err(Error::Config(format!("n must be even and at least 4, got {}", self.n)));
        }
        if self.replications == 0 || self.actions == 0 || self.per_class == 0 {
            return Err(Error::Config("replications, actions and per_class must be positive".into()));
        }
        if !(self.level > 0.0 && self.level <= 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1], got {}", self.level)));
        }
        beta_template(self.p, self.s)?;
        self.selection_config().validate()
    }

    pub fn selection_config(&self) -> SelectionConfig {
        SelectionConfig {
            delta: self.delta,
            lambda_grid: clime::default_grid(),
            mode: self.selection,
            delta1: self.delta1,
        }
    }

    pub fn invariance(&self) -> Result<Invariance> {
        Ok(match self.invariance {
            InvarianceKind::Exchange => Invariance::Exchange,
            InvarianceKind::Sign => Invariance::Sign,
            InvarianceKind::Cluster => {
                let k = self.cluster_size.ok_or_else(|| Error::Config("missing cluster_size".into()))?;
                Invariance::Cluster(Arc::new(Partition::blocks(self.n, k)?))
            }
        })
    }

    pub fn beta(&self) -> Result<BetaDesign> {
        gen_beta(self.p, self.s, derive_seed(self.seed, u64::MAX, 0))
    }

    /// Up to `per_class` coordinates of each class, lowest indices first.
    pub fn monitored(&self, design: &BetaDesign) -> Vec<usize> {
        let mut out = Vec::new();
        for class in CoordClass::ALL {
            out.extend(
                design
                    .classes
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c == class)
                    .map(|(j, _)| j)
                    .take(self.per_class),
            );
        }
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordOutcome {
    pub coord: usize,
    pub covered: bool,
    /// `None` for an unbounded interval.
    pub length: Option<f64>,
}

/// One line of the campaign journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub outcomes: Vec<CoordOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    pub coords: Vec<usize>,
    pub trials: usize,
    pub covered: usize,
    pub coverage: Option<f64>,
    pub length_q25: Option<f64>,
    pub length_q75: Option<f64>,
    pub length_q99: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: SimConfig,
    pub beta: Vec<f64>,
    pub replications: usize,
    pub failed: usize,
    pub classes: Vec<ClassSummary>,
    pub failures: Vec<(usize, String)>,
    pub runtime_secs: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    class: &'a str,
    coords: String,
    trials: usize,
    covered: usize,
    coverage: Option<f64>,
    length_q25: Option<f64>,
    length_q75: Option<f64>,
    length_q99: Option<f64>,
}

impl CoverageReport {
    pub fn class(&self, class: CoordClass) -> Option<&ClassSummary> {
        let name = class.name();
        self.classes.iter().find(|c| c.class == name)
    }

    /// One row per coordinate class.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.classes {
            let coords: Vec<String> = c.coords.iter().map(|j| j.to_string()).collect();
            out.serialize(CsvRow {
                class: &c.class,
                coords: coords.join(" "),
                trials: c.trials,
                covered: c.covered,
                coverage: c.coverage,
                length_q25: c.length_q25,
                length_q75: c.length_q75,
                length_q99: c.length_q99,
            })
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Lower order statistic at `ceil(q N)`.
pub fn order_quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[k - 1]).filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub exec: Execution,
    /// JSONL file receiving one record per finished replication.
    pub journal: Option<PathBuf>,
    /// Skip replications already present in the journal.
    pub resume: bool,
    /// Record wall-clock time in the report (breaks byte-identical output).
    pub timing: bool,
    /// Stop after this many new replications, leaving the campaign partial.
    pub limit: Option<usize>,
}

pub fn run_replication(
    cfg: &SimConfig,
    design: &BetaDesign,
    monitored: &[usize],
    index: usize,
    exec: Execution,
) -> ReplicationRecord {
    match replicate(cfg, design, monitored, index, exec) {
        Ok(outcomes) => ReplicationRecord {
            index,
            outcomes,
            error: None,
        },
        Err(e) => ReplicationRecord {
            index,
            outcomes: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

fn replicate(
    cfg: &SimConfig,
    design: &BetaDesign,
    monitored: &[usize],
    index: usize,
    exec: Execution,
) -> Result<Vec<CoordOutcome>> {
    let i = index as u64;
    let inst = gen_instance(
        cfg.covariates,
        cfg.errors,
        &design.beta,
        cfg.n,
        cfg.standardize,
        derive_seed(cfg.seed, i, 0),
    )?;
    let actions = GroupActionSet::sample(&cfg.invariance()?, cfg.n, cfg.actions, derive_seed(cfg.seed, i, 1))?;
    let icfg = InferenceConfig {
        penalty: Penalty::Pivotal,
        lasso: LassoOptions::default(),
        selection: cfg.selection_config(),
        exec,
    };
    let model = PreparedModel::new(&inst.data, &actions, &icfg)?;
    let pi0 = 1.0 - cfg.level;
    let mut out = Vec::with_capacity(monitored.len());
    for &j in monitored {
        let mut a = Array1::zeros(cfg.p);
        a[j] = 1.0;
        let ci = model.analyze(a.view(), &icfg.selection)?.interval(pi0)?;
        let len = ci.length();
        out.push(CoordOutcome {
            coord: j,
            covered: ci.contains(design.beta[j]),
            length: len.is_finite().then_some(len),
        });
    }
    Ok(out)
}

fn read_journal(path: &PathBuf) -> Result<Vec<ReplicationRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        // a torn final line from a crash is dropped and recomputed
        match serde_json::from_str::<ReplicationRecord>(&line?) {
            Ok(r) => out.push(r),
            Err(_) => break,
        }
    }
    Ok(out)
}

pub fn run_coverage(cfg: &SimConfig, opts: &RunOptions) -> Result<CoverageReport> {
    cfg.validate()?;
    let start = Instant::now();
    let design = cfg.beta()?;
    let monitored = cfg.monitored(&design);

    let mut done: BTreeMap<usize, ReplicationRecord> = BTreeMap::new();
    let journal = match &opts.journal {
        Some(path) => {
            if opts.resume {
                for r in read_journal(path)? {
                    if r.index < cfg.replications {
                        done.insert(r.index, r);
                    }
                }
            }
            // rewrite the valid prefix so appends never follow a torn line
            let mut f = File::create(path)?;
            for r in done.values() {
                writeln!(f, "{}", serde_json::to_string(r)?)?;
            }
            f.flush()?;
            Some(Mutex::new(OpenOptions::new().append(true).open(path)?))
        }
        None => None,
    };

    let mut todo: Vec<usize> = (0..cfg.replications).filter(|i| !done.contains_key(i)).collect();
    if let Some(limit) = opts.limit {
        todo.truncate(limit);
    }
    let fresh = exec::map_slice(opts.exec, &todo, |&i| -> Result<ReplicationRecord> {
        let rec = run_replication(cfg, &design, &monitored, i, opts.exec);
        if let Some(j) = &journal {
            let line = serde_json::to_string(&rec)?;
            let mut f = j.lock().expect("journal lock");
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        Ok(rec)
    });
    for rec in fresh {
        let rec = rec?;
        done.insert(rec.index, rec);
    }

    let mut report = aggregate(cfg, &design, &monitored, done.values());
    if opts.timing {
        report.runtime_secs = Some(start.elapsed().as_secs_f64());
    }
    Ok(report)
}

pub fn aggregate<'a>(
    cfg: &SimConfig,
    design: &BetaDesign,
    monitored: &[usize],
    records: impl Iterator<Item = &'a ReplicationRecord>,
) -> CoverageReport {
    let mut covered: BTreeMap<CoordClass, (usize, usize, Vec<f64>)> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut count = 0;
    for rec in records {
        count += 1;
        if let Some(e) = &rec.error {
            failures.push((rec.index, e.clone()));
            continue;
        }
        for o in &rec.outcomes {
            let entry = covered.entry(design.classes[o.coord]).or_default();
            entry.0 += 1;
            entry.1 += o.covered as usize;
            entry.2.push(o.length.unwrap_or(f64::INFINITY));
        }
    }
    let classes = CoordClass::ALL
        .iter()
        .map(|class| {
            let coords: Vec<usize> = monitored
                .iter()
                .copied()
                .filter(|j| design.classes[*j] == *class)
                .collect();
            let (trials, hit, mut lengths) = covered.remove(class).unwrap_or_default();
            lengths.sort_by(f64::total_cmp);
            ClassSummary {
                class: class.name(),
                coords,
                trials,
                covered: hit,
                coverage: (trials > 0).then(|| hit as f64 / trials as f64),
                length_q25: order_quantile(&lengths, 0.25),
                length_q75: order_quantile(&lengths, 0.75),
                length_q99: order_quantile(&lengths, 0.99),
            }
        })
        .collect();
    CoverageReport {
        config: cfg.clone(),
        beta: design.beta.to_vec(),
        replications: count,
        failed: failures.len(),
        classes,
        failures,
        runtime_secs: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_s4() {
        assert_eq!(beta_template(10, 4).unwrap(), vec![2, 3, 4, 6]);
        assert!(beta_template(8, 4).is_err());
    }

    #[test]
    fn template_s15_counts() {
        let pos = beta_template(100, 15).unwrap();
        assert_eq!(pos.len(), 15);
        let d = gen_beta(100, 15, 3).unwrap();
        let nz = d.beta.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nz, 15);
        let active_iso = d
            .classes
            .iter()
            .filter(|c| c.active && c.place == Neighborhood::Isolated)
            .count();
        assert_eq!(active_iso, 3);
    }

    #[test]
    fn every_class_present_at_s4() {
        let d = gen_beta(20, 4, 0).unwrap();
        for class in CoordClass::ALL {
            assert!(d.classes.contains(&class), "{}", class.name());
        }
    }

    #[test]
    fn classify_edges() {
        let c = classify(&Array1::from(vec![1.0, 0.0, 1.0, 1.0]));
        assert_eq!(c[0].place, Neighborhood::Isolated);
        assert_eq!(c[1].place, Neighborhood::Isolated);
        assert!(!c[1].active);
        assert_eq!(c[3].place, Neighborhood::Adjacent);
    }

    #[test]
    fn exclusion_rules() {
        let mut c = SimConfig::new(50, 100, CovariateSetting::N1, ErrorSetting::HN);
        assert!(c.validate().is_err());
        c.invariance = InvarianceKind::Sign;
        assert!(c.validate().is_ok());
        c.errors = ErrorSetting::WB;
        assert!(c.validate().is_err());
    }

    #[test]
    fn cluster_needs_size() {
        let mut c = SimConfig::new(20, 30, CovariateSetting::N1, ErrorSetting::N1);
        c.invariance = InvarianceKind::Cluster;
        assert!(c.validate().is_err());
        c.cluster_size = Some(4);
        assert!(c.validate().is_ok());
        c.cluster_size = Some(3);
        assert!(c.validate().is_err());
        c.cluster_size = Some(2);
        assert!(c.validate().is_err());
    }

    #[test]
    fn hn_zero_row() {
        let x = Array2::zeros((3, 4));
        assert!(gen_errors(ErrorSetting::HN, &x, 1).unwrap().iter().all(|e| *e == 0.0));
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0, 0);
        assert_ne!(a, derive_seed(7, 1, 0));
        assert_ne!(a, derive_seed(7, 0, 1));
        assert_ne!(a, derive_seed(8, 0, 0));
        assert_eq!(a, derive_seed(7, 0, 0));
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(order_quantile(&v, 0.25), Some(1.0));
        assert_eq!(order_quantile(&v, 0.75), Some(3.0));
        assert_eq!(order_quantile(&v, 0.99), Some(4.0));
        assert_eq!(order_quantile(&[1.0, f64::INFINITY], 0.99), None);
    }

    #[test]
    fn toml_round_trip() {
        let c = SimConfig::from_toml("n = 20\np = 30\ncovariates = \"NT\"\nerrors = \"N2\"\n").unwrap();
        assert_eq!(c.covariates, CovariateSetting::NT);
        assert_eq!(c.actions, 1000);
        assert!(SimConfig::from_toml("n = 20\np = 30\ncovariates = \"XX\"\nerrors = \"N2\"\n").is_err());
    }
}
