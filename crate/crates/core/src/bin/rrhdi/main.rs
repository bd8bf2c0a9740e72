//! Command-line front end.
//!
//! Exit status: 0 on success, 2 for usage or input errors, 3 when a
//! numerical stage fails.

mod input;

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use rrhdi::clime::{geometric_grid, scaled_grid};
use rrhdi::diagnostics::{self, Diagnosis};
use rrhdi::exec::{self, Execution};
use rrhdi::inference::{Hypothesis, InferenceConfig, Penalty, PreparedModel};
use rrhdi::lasso::{self, LassoFit, LassoOptions};
use rrhdi::sim::{self, CovariateSetting, ErrorSetting, RunOptions, SimConfig};
use rrhdi::{Dataset, Error, GroupActionSet, Invariance, Partition, SelectionConfig, SelectionMode};

#[derive(Parser, Debug)]
#[command(name = "rrhdi", version, about = "Residual-randomization inference for high-dimensional regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test a' beta = a0 on a CSV dataset.
    Test(TestArgs),
    /// Confidence intervals for one or more coordinates.
    Ci(CiArgs),
    /// Run a coverage campaign from a TOML config.
    Simulate(SimArgs),
    /// Compare oracle and attainable distributions on synthetic data.
    Diagnose(DiagArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, ValueEnum, PartialEq, Eq)]
enum InvarianceArg {
    Exchange,
    Sign,
    Cluster,
}

#[derive(Copy, Clone, Debug, ValueEnum, PartialEq, Eq)]
enum SelectionArg {
    Weighted,
    TuningFree,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Worker threads (1 runs sequentially).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct MethodArgs {
    #[arg(long, value_enum, default_value = "exchange")]
    invariance: InvarianceArg,
    /// Cluster labels, one per line, required with `--invariance cluster`.
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Number of sampled group actions.
    #[arg(long, default_value_t = 1000)]
    actions: usize,
    #[arg(long, default_value_t = rrhdi::selection::DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_max: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_min: f64,
    #[arg(long, default_value_t = 50)]
    grid_size: usize,
    /// Use the `alpha sqrt(log p / n)` grid instead of `--lambda-max`/`--lambda-min`.
    #[arg(long)]
    scaled_grid: bool,
    #[arg(long, value_enum, default_value = "weighted")]
    selection: SelectionArg,
    /// Tuning-free reference scale.
    #[arg(long)]
    delta1: Option<f64>,
    /// Fixed Lasso penalty instead of the square-root Lasso.
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long, env = "RRHDI_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV with a header row; first column is the response.
    #[arg(long)]
    data: PathBuf,
    /// Use the covariates as given instead of centering and scaling them.
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Coordinate index (0-based) of the tested coefficient.
    #[arg(long, conflicts_with = "contrast", required_unless_present = "contrast")]
    coord: Option<usize>,
    /// File holding the contrast vector a.
    #[arg(long)]
    contrast: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    a0: f64,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CiArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Coordinates (0-based), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    coords: Vec<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long)]
    config: PathBuf,
    /// Journal of finished replications.
    #[arg(long)]
    journal: Option<PathBuf>,
    /// Continue a campaign from its journal.
    #[arg(long, requires = "journal")]
    resume: bool,
    /// Record wall-clock time in the report.
    #[arg(long)]
    timing: bool,
    /// Stop after this many new replications.
    #[arg(long, hide = true)]
    limit: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct DiagArgs {
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    p: usize,
    #[arg(long, default_value_t = 4)]
    s: usize,
    #[arg(long, default_value = "N1")]
    covariates: String,
    #[arg(long, default_value = "N1")]
    errors: String,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    /// Coordinate examined in every instance.
    #[arg(long, default_value_t = 2)]
    coord: usize,
    /// Replace the pilot fit by the true coefficients.
    #[arg(long)]
    oracle_fit: bool,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Test(a) => a.output.threads,
        Command::Ci(a) => a.output.threads,
        Command::Simulate(a) => a.output.threads,
        Command::Diagnose(a) => a.output.threads,
    };
    let exec = if threads == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let outcome = exec::with_threads(threads, || match cli.command {
        Command::Test(a) => cmd_test(a, exec),
        Command::Ci(a) => cmd_ci(a, exec),
        Command::Simulate(a) => cmd_simulate(a, exec),
        Command::Diagnose(a) => cmd_diagnose(a, exec),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

impl MethodArgs {
    fn selection(&self, n: usize, p: usize) -> CliResult<SelectionConfig> {
        let lambda_grid = if self.scaled_grid {
            scaled_grid(n, p, self.grid_size)?
        } else {
            geometric_grid(self.lambda_max, self.lambda_min, self.grid_size)
        };
        Ok(SelectionConfig {
            delta: self.delta,
            lambda_grid,
            mode: match self.selection {
                SelectionArg::Weighted => SelectionMode::Weighted,
                SelectionArg::TuningFree => SelectionMode::TuningFree,
            },
            delta1: self.delta1,
        })
    }

    fn inference(&self, exec: Execution, n: usize, p: usize) -> CliResult<InferenceConfig> {
        if self.actions == 0 {
            return Err(CliError::Usage("--actions must be positive".into()));
        }
        let cfg = InferenceConfig {
            penalty: self.lambda1.map_or(Penalty::Pivotal, Penalty::Fixed),
            lasso: LassoOptions::default(),
            selection: self.selection(n, p)?,
            exec,
        };
        cfg.selection.validate()?;
        Ok(cfg)
    }

    fn invariance(&self, n: usize) -> CliResult<Invariance> {
        match (self.invariance, &self.clusters) {
            (InvarianceArg::Cluster, None) => {
                Err(CliError::Usage("--invariance cluster requires --clusters".into()))
            }
            (InvarianceArg::Cluster, Some(path)) => {
                let mut labels = input::read_labels(path)?;
                if labels.len() == n + 1 {
                    labels.pop();
                }
                if labels.len() != n {
                    return Err(CliError::Usage(format!(
                        "cluster file has {} labels for {n} observations",
                        labels.len()
                    )));
                }
                Ok(Invariance::Cluster(Arc::new(Partition::from_labels(&labels)?)))
            }
            (_, Some(_)) => Err(CliError::Usage("--clusters needs --invariance cluster".into())),
            (InvarianceArg::Exchange, None) => Ok(Invariance::Exchange),
            (InvarianceArg::Sign, None) => Ok(Invariance::Sign),
        }
    }
}

fn load(args: &DataArgs) -> CliResult<Dataset> {
    let mut data = input::read_dataset(&args.data)?;
    if data.n() % 2 == 1 {
        eprintln!(
            "warning: odd sample size {}; dropping the last observation",
            data.n()
        );
        data = data.truncate_to_even();
    }
    if !args.no_standardize {
        data = data.standardize()?;
    }
    Ok(data)
}

fn emit(out: &OutputArgs, json: &impl Serialize, csv_rows: impl FnOnce(&mut Vec<u8>) -> CliResult<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    match out.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, json).map_err(Error::from)?;
            buf.push(b'\n');
        }
        Format::Csv => csv_rows(&mut buf)?,
    }
    match &out.out {
        Some(path) => File::create(path)?.write_all(&buf)?,
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn write_csv<T: Serialize>(buf: &mut Vec<u8>, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(buf);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub coord: Option<usize>,
    pub a0: f64,
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub debiased: f64,
    pub t_obs: f64,
    pub lambda_star: f64,
    pub actions: usize,
    pub seed: u64,
    pub invariance: String,
    pub n: usize,
    pub p: usize,
    pub standardized: bool,
    pub point_mass: bool,
}

fn cmd_test(args: TestArgs, exec: Execution) -> CliResult<()> {
    let data = load(&args.data)?;
    let a = match (args.coord, &args.contrast) {
        (Some(j), _) => Hypothesis::coordinate(data.p(), j, args.a0)?.a,
        (None, Some(path)) => input::read_vector(path)?,
        (None, None) => return Err(CliError::Usage("need --coord or --contrast".into())),
    };
    if a.len() != data.p() {
        return Err(CliError::Usage(format!(
            "contrast has length {}, data has p = {}",
            a.len(),
            data.p()
        )));
    }
    let hyp = Hypothesis::new(a, args.a0)?;
    let cfg = args.method.inference(exec, data.n(), data.p())?;
    let inv = args.method.invariance(data.n())?;
    let actions = GroupActionSet::sample(&inv, data.n(), args.method.actions, args.method.seed)?;
    let res = rrhdi::inference::test(&data, &hyp, &actions, &cfg)?;
    let report = TestReport {
        coord: args.coord,
        a0: args.a0,
        p_one_sided: res.p_one_sided,
        p_two_sided: res.p_two_sided,
        debiased: res.debiased,
        t_obs: res.t_obs,
        lambda_star: res.lambda_star,
        actions: actions.count(),
        seed: args.method.seed,
        invariance: inv.name().to_string(),
        n: data.n(),
        p: data.p(),
        standardized: data.standardized,
        point_mass: res.point_mass,
    };
    emit(&args.output, &report, |buf| write_csv(buf, std::slice::from_ref(&report)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub coord: usize,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub debiased: f64,
    pub lambda_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub level: f64,
    pub actions: usize,
    pub seed: u64,
    pub invariance: String,
    pub standardized: bool,
    pub intervals: Vec<IntervalRow>,
}

fn cmd_ci(args: CiArgs, exec: Execution) -> CliResult<()> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::Usage(format!("--level must lie in (0, 1), got {}", args.level)));
    }
    let data = load(&args.data)?;
    if let Some(j) = args.coords.iter().find(|j| **j >= data.p()) {
        return Err(CliError::Usage(format!("coordinate {j} out of range for p = {}", data.p())));
    }
    let cfg = args.method.inference(exec, data.n(), data.p())?;
    let inv = args.method.invariance(data.n())?;
    let actions = GroupActionSet::sample(&inv, data.n(), args.method.actions, args.method.seed)?;
    let model = PreparedModel::new(&data, &actions, &cfg)?;
    let mut intervals = Vec::with_capacity(args.coords.len());
    for &j in &args.coords {
        let mut a = Array1::zeros(data.p());
        a[j] = 1.0;
        let analysis = model.analyze(a.view(), &cfg.selection)?;
        let ci = analysis.interval(1.0 - args.level)?;
        if ci.undersampled {
            eprintln!("warning: {} actions are few for level {}", actions.count(), args.level);
        }
        intervals.push(IntervalRow {
            coord: j,
            lower: ci.lower,
            upper: ci.upper,
            level: args.level,
            debiased: analysis.debiased,
            lambda_star: analysis.selection.lambda_star,
        });
    }
    let report = CiReport {
        level: args.level,
        actions: actions.count(),
        seed: args.method.seed,
        invariance: inv.name().to_string(),
        standardized: data.standardized,
        intervals,
    };
    emit(&args.output, &report, |buf| write_csv(buf, &report.intervals))
}

fn cmd_simulate(args: SimArgs, exec: Execution) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let cfg = SimConfig::from_toml(&text)?;
    let opts = RunOptions {
        exec,
        journal: args.journal.clone(),
        resume: args.resume,
        timing: args.timing,
        limit: args.limit,
    };
    let report = sim::run_coverage(&cfg, &opts)?;
    emit(&args.output, &report, |buf| Ok(report.write_csv(buf)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub instance: usize,
    pub coord: usize,
    pub w1: f64,
    pub lemma1_bound: f64,
    pub bias_term: f64,
    pub cost_term: f64,
    pub lambda_star: f64,
}

fn cmd_diagnose(args: DiagArgs, exec: Execution) -> CliResult<()> {
    let covariates: CovariateSetting = args.covariates.parse()?;
    let errors: ErrorSetting = args.errors.parse()?;
    if args.n < 4 || !args.n.is_multiple_of(2) {
        return Err(CliError::Usage(format!("--n must be even and at least 4, got {}", args.n)));
    }
    if args.coord >= args.p {
        return Err(CliError::Usage(format!("coordinate {} out of range for p = {}", args.coord, args.p)));
    }
    let design = sim::gen_beta(args.p, args.s, sim::derive_seed(args.method.seed, u64::MAX, 0))?;
    let sel = args.method.selection(args.n, args.p)?;
    sel.validate()?;
    let inv = args.method.invariance(args.n)?;
    let mut a = Array1::zeros(args.p);
    a[args.coord] = 1.0;
    let mut rows = Vec::with_capacity(args.instances);
    for k in 0..args.instances {
        let seed = sim::derive_seed(args.method.seed, k as u64, 0);
        let inst = sim::gen_instance(covariates, errors, &design.beta, args.n, true, seed)?;
        let actions = GroupActionSet::sample(&inv, args.n, args.method.actions, sim::derive_seed(args.method.seed, k as u64, 1))?;
        let fit = if args.oracle_fit {
            LassoFit {
                beta: design.beta.clone(),
                lambda1: 0.0,
                residuals: inst.oracle.eps_true.clone(),
                support_size: args.s,
                corrected: false,
                degenerate: false,
            }
        } else {
            match args.method.lambda1 {
                Some(l) => lasso::fit_lasso(&inst.data, l, &LassoOptions::default())?,
                None => lasso::fit_sqrt_lasso(&inst.data, &LassoOptions::default())?,
            }
        };
        let d: Diagnosis = diagnostics::diagnose(&inst.data, &inst.oracle, &fit, a.view(), &actions, &sel, exec)?;
        rows.push(DiagnosticRow {
            instance: k,
            coord: args.coord,
            w1: d.w1,
            lemma1_bound: d.bound,
            bias_term: d.bias,
            cost_term: d.cost,
            lambda_star: d.lambda_star,
        });
    }
    emit(&args.output, &rows, |buf| write_csv(buf, &rows))
}
