mod support;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rrhdi::lasso::{self, LassoOptions};
use rrhdi::Dataset;
use support::rng;

fn opts() -> LassoOptions {
    LassoOptions::default()
}

#[test]
fn matches_proximal_gradient_reference() {
    let mut r = rng(3);
    for _ in 0..10 {
        let data = support::sparse_instance(&mut r, 20, 10, 3);
        let fit = lasso::fit_lasso(&data, 0.1, &opts()).unwrap();
        let reference = support::lasso_reference(&data, 0.1, 20_000);
        let ours = lasso::lasso_objective(&data, fit.beta.view(), 0.1);
        let theirs = lasso::lasso_objective(&data, reference.view(), 0.1);
        assert!(ours <= theirs + 1e-12, "{ours} > {theirs}");
        assert!((ours - theirs).abs() < 1e-8);
        let dev = support::max_abs((&fit.beta - &reference).as_slice().unwrap());
        assert!(dev < 1e-5, "coefficient deviation {dev}");
    }
}

#[test]
fn fit_invariants_hold() {
    let mut r = rng(4);
    let data = support::sparse_instance(&mut r, 30, 60, 4);
    let fit = lasso::fit_lasso(&data, 0.15, &opts()).unwrap();
    let resid = &data.y - &data.x.dot(&fit.beta);
    assert!(support::max_abs((&resid - &fit.residuals).as_slice().unwrap()) <= 1e-10 * 30.0);
    assert_eq!(fit.support_size, fit.beta.iter().filter(|b| b.abs() > 0.0).count());
    assert!(lasso::kkt_violation(&data, fit.beta.view(), 0.15) <= 1e-6);
    assert!(!fit.corrected);
}

#[test]
fn sqrt_lasso_orthonormal_closed_form() {
    let mut r = rng(9);
    for _ in 0..20 {
        let x = support::orthonormal_design(&mut r, 40, 2);
        let beta = Array1::from(vec![1.0, 0.05]);
        let y = x.dot(&beta) + support::gaussian_vec(&mut r, 40);
        let data = Dataset::new(x, y).unwrap();
        let fit = lasso::fit_sqrt_lasso(&data, &opts()).unwrap();
        let lambda = lasso::pivotal_penalty(1.1, 40, 2);
        let want = support::sqrt_lasso_orthonormal(&data, lambda);
        let dev = support::max_abs((&fit.beta - &want).as_slice().unwrap());
        assert!(dev < 1e-7, "deviation {dev}");
    }
}

#[test]
fn sqrt_lasso_beats_converted_lasso_fits() {
    let mut r = rng(12);
    let data = support::sparse_instance(&mut r, 50, 100, 4);
    let fit = lasso::fit_sqrt_lasso(&data, &opts()).unwrap();
    let lambda = lasso::pivotal_penalty(1.1, 50, 100);
    let ours = lasso::sqrt_lasso_objective(&data, fit.beta.view(), lambda);
    for l1 in [0.05, 0.1, 0.2, 0.3, fit.lambda1] {
        let other = lasso::fit_lasso(&data, l1, &opts()).unwrap();
        let theirs = lasso::sqrt_lasso_objective(&data, other.beta.view(), lambda);
        assert!(ours <= theirs + 1e-8, "lambda1 {l1}: {ours} > {theirs}");
    }
    // the reported Lasso-scale penalty reproduces the fit
    let sigma = fit.residuals.dot(&fit.residuals).sqrt() / 50f64.sqrt();
    assert!((fit.lambda1 - lambda * sigma).abs() < 1e-6);
    assert!(lasso::kkt_violation(&data, fit.beta.view(), fit.lambda1) < 1e-5);
}

#[test]
fn correction_rejects_full_support() {
    let x = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 2.0 } else { 0.0 });
    let data = Dataset::new(x, Array1::from(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
    let fit = lasso::fit_lasso(&data, 0.01, &opts()).unwrap();
    assert_eq!(fit.support_size, 4);
    let err = lasso::correct_residuals(&fit, 4).unwrap_err();
    assert!(err.to_string().contains("degenerate fit: full support"));
}

#[test]
fn non_finite_input_rejected() {
    let x = Array2::from_elem((3, 2), 1.0);
    let mut y = Array1::from(vec![1.0, 2.0, 3.0]);
    y[1] = f64::NAN;
    assert!(Dataset::new(x, y).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn orthonormal_soft_threshold(seed in any::<u64>(), p in 1usize..6, lambda in 0.0f64..1.5) {
        let mut r = rng(seed);
        let x = support::orthonormal_design(&mut r, 12, p);
        let y = support::gaussian_vec(&mut r, 12);
        let data = Dataset::new(x, y).unwrap();
        let fit = lasso::fit_lasso(&data, lambda, &opts()).unwrap();
        let z = data.x.t().dot(&data.y) / 12.0;
        for j in 0..p {
            prop_assert!((fit.beta[j] - lasso::soft_threshold(z[j], lambda)).abs() < 1e-8);
        }
    }

    #[test]
    fn kkt_certificate(seed in any::<u64>(), n in 5usize..30, p in 1usize..40, frac in 0.05f64..1.0) {
        let mut r = rng(seed);
        let data = support::sparse_instance(&mut r, n, p, 3);
        let lmax = support::max_abs((data.x.t().dot(&data.y) / n as f64).as_slice().unwrap());
        let lambda = frac * lmax;
        let fit = lasso::fit_lasso(&data, lambda, &opts()).unwrap();
        prop_assert!(lasso::kkt_violation(&data, fit.beta.view(), lambda) <= 1e-6);
    }

    #[test]
    fn null_solution_above_threshold(seed in any::<u64>(), extra in 0.0f64..2.0) {
        let mut r = rng(seed);
        let data = support::sparse_instance(&mut r, 15, 8, 2);
        let lmax = support::max_abs((data.x.t().dot(&data.y) / 15.0).as_slice().unwrap());
        let fit = lasso::fit_lasso(&data, lmax + extra, &opts()).unwrap();
        prop_assert!(fit.beta.iter().all(|b| *b == 0.0));
    }
}
