use std::fs;
use std::io::Write;

use ndarray::{Array2, Axis};
use rrhdi::sim::{
    self, gen_covariates, gen_errors, run_coverage, CoordClass, CovariateSetting, ErrorSetting, InvarianceKind,
    RunOptions, SimConfig,
};
use rrhdi::Execution;

fn moments(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = v.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn correlation(x: &Array2<f64>, a: usize, b: usize) -> f64 {
    let (ma, va) = moments(x.column(a).iter().copied());
    let (mb, vb) = moments(x.column(b).iter().copied());
    let cov = x.column(a).iter().zip(x.column(b)).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / x.nrows() as f64;
    cov / (va * vb).sqrt()
}

#[test]
fn gamma_covariates_are_centred_unit_variance() {
    let x = gen_covariates(CovariateSetting::G1, 1000, 1000, 1).unwrap();
    let (m, v) = moments(x.iter().copied());
    assert!(m.abs() < 0.01, "mean {m}");
    assert!((v - 1.0).abs() < 0.02, "variance {v}");
}

#[test]
fn toeplitz_covariates_have_ar1_correlation() {
    for setting in [CovariateSetting::NT, CovariateSetting::GT] {
        let x = gen_covariates(setting, 10_000, 4, 2).unwrap();
        let r01 = correlation(&x, 0, 1);
        let r23 = correlation(&x, 2, 3);
        if setting == CovariateSetting::NT {
            assert!((r01 - 0.8).abs() < 0.02, "{r01}");
            assert!((r23 - 0.8).abs() < 0.02, "{r23}");
            let r02 = correlation(&x, 0, 2);
            assert!((r02 - 0.64).abs() < 0.03, "{r02}");
        } else {
            // the copula weakens but keeps strong dependence
            assert!(r01 > 0.6 && r01 < 0.8, "{r01}");
            let (m, v) = moments(x.iter().copied());
            assert!(m.abs() < 0.03 && (v - 1.0).abs() < 0.06, "{m} {v}");
        }
    }
}

#[test]
fn weibull_and_mixture_moments() {
    let wb = gen_covariates(CovariateSetting::WB, 1000, 1000, 3).unwrap();
    let (m, v) = moments(wb.iter().copied());
    assert!(m.abs() < 0.05, "weibull mean {m}");
    assert!((v - 20.0).abs() < 1.0, "weibull variance {v}");
    let n2 = gen_covariates(CovariateSetting::N2, 1000, 1000, 4).unwrap();
    let (m, v) = moments(n2.iter().copied());
    assert!(m.abs() < 0.01, "mixture mean {m}");
    assert!((v - 5.0).abs() < 0.05, "mixture variance {v}");
}

#[test]
fn error_settings_match_covariate_marginals() {
    let x = Array2::zeros((200_000, 1));
    for (setting, var) in [(ErrorSetting::N1, 1.0), (ErrorSetting::G1, 1.0), (ErrorSetting::N2, 5.0)] {
        let e = gen_errors(setting, &x, 5).unwrap();
        let (m, v) = moments(e.iter().copied());
        assert!(m.abs() < 0.02, "{setting}: mean {m}");
        assert!((v - var).abs() < 0.05 * var, "{setting}: variance {v}");
    }
}

#[test]
fn heteroskedastic_scale_follows_rows() {
    // rows with |x|^2 / p = 8 give standard deviation 4
    let x = Array2::from_elem((100_000, 2), 8f64.sqrt());
    let e = gen_errors(ErrorSetting::HN, &x, 6).unwrap();
    let (m, v) = moments(e.iter().copied());
    assert!(m.abs() < 0.05 && (v - 16.0).abs() < 0.3, "{m} {v}");
    let e = gen_errors(ErrorSetting::HM, &x, 6).unwrap();
    let (m, v) = moments(e.iter().copied());
    assert!(m.abs() < 0.05 && (v - 20.0).abs() < 0.4, "{m} {v}");
}

#[test]
fn s15_template_matches_fixture() {
    let want = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/template_s15_p100.txt")).unwrap();
    let got: Vec<String> = sim::beta_template(100, 15).unwrap().iter().map(|j| j.to_string()).collect();
    assert_eq!(format!("{}\n", got.join(" ")), want);
}

#[test]
fn instance_reproduces_response() {
    let design = sim::gen_beta(50, 4, 1).unwrap();
    for standardize in [false, true] {
        let inst =
            sim::gen_instance(CovariateSetting::G1, ErrorSetting::WB, &design.beta, 30, standardize, 9).unwrap();
        inst.oracle.check(&inst.data).unwrap();
        assert_eq!(inst.oracle.beta_true, design.beta);
        if standardize {
            let means = inst.data.x.mean_axis(Axis(0)).unwrap();
            assert!(means.iter().all(|m| m.abs() < 1e-12));
        }
    }
}

fn small_config() -> SimConfig {
    let mut cfg = SimConfig::new(20, 30, CovariateSetting::N1, ErrorSetting::N1);
    cfg.replications = 6;
    cfg.actions = 120;
    cfg.seed = 11;
    cfg
}

#[test]
fn unit_level_covers_everything() {
    let mut cfg = small_config();
    cfg.level = 1.0;
    let report = run_coverage(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.failed, 0);
    for c in &report.classes {
        assert_eq!(c.coverage, Some(1.0), "{}", c.class);
        assert_eq!(c.length_q25, None);
    }
}

#[test]
fn single_replication_bookkeeping() {
    let mut cfg = small_config();
    cfg.replications = 1;
    let design = cfg.beta().unwrap();
    let monitored = cfg.monitored(&design);
    let report = run_coverage(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(report.replications, 1);
    let trials: usize = report.classes.iter().map(|c| c.trials).sum();
    assert_eq!(trials, monitored.len());
    for c in &report.classes {
        assert_eq!(c.trials, c.coords.len());
        assert!(c.covered <= c.trials);
    }
    assert_eq!(report.beta, design.beta.to_vec());
    assert!(report.runtime_secs.is_none());
    assert!(CoordClass::ALL.iter().all(|c| report.class(*c).is_some()));
}

#[test]
fn campaign_is_deterministic_across_execution_modes() {
    let cfg = small_config();
    let par = run_coverage(&cfg, &RunOptions { exec: Execution::Parallel, ..RunOptions::default() }).unwrap();
    let seq = run_coverage(&cfg, &RunOptions { exec: Execution::Sequential, ..RunOptions::default() }).unwrap();
    assert_eq!(par, seq);
    let mut a = Vec::new();
    let mut b = Vec::new();
    par.write_csv(&mut a).unwrap();
    seq.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("class,coords,trials,covered,coverage"));
}

#[test]
fn resume_finishes_a_partial_campaign() {
    let cfg = small_config();
    let full = run_coverage(&cfg, &RunOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("run.jsonl");
    let partial = RunOptions {
        journal: Some(journal.clone()),
        limit: Some(2),
        ..RunOptions::default()
    };
    let first = run_coverage(&cfg, &partial).unwrap();
    assert_eq!(first.replications, 2);
    // simulate a crash mid-write
    let mut f = fs::OpenOptions::new().append(true).open(&journal).unwrap();
    write!(f, "{{\"index\": 2, \"outc").unwrap();
    drop(f);

    let resume = RunOptions {
        journal: Some(journal.clone()),
        resume: true,
        ..RunOptions::default()
    };
    let resumed = run_coverage(&cfg, &resume).unwrap();
    assert_eq!(resumed, full);
    let lines = fs::read_to_string(&journal).unwrap();
    assert_eq!(lines.lines().count(), cfg.replications);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(SimConfig::from_toml("n = 20\np = 30\ncovariates = \"N1\"\nerrors = \"N1\"\nbogus = 1\n").is_err());
    assert!(SimConfig::from_toml("n = 20\np = 30\ncovariates = \"N1\"\nerrors = \"HN\"\n").is_err());
    assert!(SimConfig::from_toml("n = 21\np = 30\ncovariates = \"N1\"\nerrors = \"N1\"\n").is_err());
    let ok = SimConfig::from_toml(
        "n = 24\np = 30\ncovariates = \"NT\"\nerrors = \"N2\"\ninvariance = \"cluster\"\ncluster_size = 6\n",
    )
    .unwrap();
    assert_eq!(ok.invariance, InvarianceKind::Cluster);
    assert_eq!(ok.replications, 200);
    let mut cfg = small_config();
    cfg.level = 1.5;
    assert!(run_coverage(&cfg, &RunOptions::default()).is_err());
}

#[test]
fn beta_is_rademacher_on_template() {
    let d = sim::gen_beta(100, 15, 3).unwrap();
    let support: Vec<usize> = (0..100).filter(|j| d.beta[*j] != 0.0).collect();
    assert_eq!(support, sim::beta_template(100, 15).unwrap());
    assert!(d.beta.iter().all(|b| *b == 0.0 || b.abs() == 1.0));
    assert_eq!(d.classes, sim::classify(&d.beta));
}
