mod common;

use common::{clouds, lognormal, normal, rng};
use nalgebra::DMatrix;
use proptest::prelude::*;
use skewselect_core::{
    backward_lambda_selection, em_fit_gmm, em_fit_manly, forward_lambda_selection, generate_dataset, manly_component_logdensity,
    manly_inverse, manly_transform, DataMatrix, EmConfig, LambdaMask, SimulationSpec,
};

fn config(seed: u64) -> EmConfig {
    EmConfig { n_starts: 4, ..EmConfig::default() }.with_seed(seed)
}

/// The inverse has slope `exp(-lambda x)`, so rounding `y` to the nearest
/// double costs up to `eps |y| exp(-lambda x)` in `x`.
fn round_trip_bound(x: f64, lambda: f64, y: f64) -> f64 {
    1e-9 + 4.0 * f64::EPSILON * y.abs().max(1.0) * (-lambda * x).exp()
}

#[test]
fn round_trip_on_grid() {
    for a in 0..=200 {
        let x = -10.0 + 0.1 * a as f64;
        for b in 0..=80 {
            let lambda = -2.0 + 0.05 * b as f64;
            let y = manly_transform(x, lambda).unwrap();
            let back = manly_inverse(y, lambda).unwrap();
            assert!((back - x).abs() <= round_trip_bound(x, lambda, y), "x={x} lambda={lambda} back={back}");
            if lambda * x > -14.0 {
                assert!((back - x).abs() <= 1e-9, "x={x} lambda={lambda} back={back}");
            }
        }
    }
}

#[test]
fn continuous_at_zero() {
    let l = 1e-5 * 0.99;
    for a in 0..=40 {
        let x = -10.0 + 0.5 * a as f64;
        let series = x + l * x * x / 2.0 + l * l * x * x * x / 6.0;
        assert!((manly_transform(x, l).unwrap() - series).abs() <= 1e-9);
        assert!((manly_transform(x, -l).unwrap() - (x - l * x * x / 2.0 + l * l * x * x * x / 6.0)).abs() <= 1e-9);
        // just outside the series branch
        let above = manly_transform(x, 1.01e-5).unwrap();
        assert!((above - x).abs() < 1e-3);
    }
}

/// Composite Simpson integral of the 1-D density over `[lo, hi]`.
fn integrate(lambda: f64, mu: f64, var: f64, lo: f64, hi: f64) -> f64 {
    let steps = 400_000;
    let h = (hi - lo) / steps as f64;
    let sigma = DMatrix::from_element(1, 1, var);
    let f = |x: f64| manly_component_logdensity(&[x], &[lambda], &[mu], &sigma).map_or(0.0, f64::exp);
    let mut total = f(lo) + f(hi);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        total += w * f(lo + k as f64 * h);
    }
    total * h / 3.0
}

#[test]
fn one_dimensional_density_integrates_to_one() {
    // Triples keep the normal mass beyond the transform's range below 1e-5.
    for (lambda, mu, var) in [(0.1, 0.0, 1.0), (-0.3, 0.0, 0.25), (1.0, 1.0, 0.16), (0.5, 3.0, 1.0), (-1.0, -1.0, 0.16)] {
        let mass = integrate(lambda, mu, var, -60.0, 60.0);
        assert!((mass - 1.0).abs() < 1e-4, "({lambda}, {mu}, {var}) -> {mass}");
    }
}

#[test]
fn gaussian_mask_reproduces_gmm() {
    for seed in 0..4 {
        let mut r = rng(100 + seed);
        let m = DMatrix::from_fn(90, 2, |i, _| normal(&mut r) + 4.0 * (i % 2) as f64);
        let x = DataMatrix::from_matrix(m).unwrap();
        for g in 1..=2 {
            let cfg = config(seed);
            let gmm = em_fit_gmm(&x, g, &cfg).unwrap();
            let manly = em_fit_manly(&x, g, &LambdaMask::all(g, 2, false), &cfg).unwrap();
            assert!((gmm.loglik - manly.loglik).abs() < 1e-8);
            assert!((gmm.bic - manly.bic).abs() < 1e-8);
            assert_eq!(manly.lambdas.effective_nonzero(), 0);
        }
    }
}

#[test]
fn lognormal_sample_prefers_negative_lambda() {
    let x = lognormal(500, 3);
    let cfg = config(1);
    let gauss = em_fit_gmm(&x, 1, &cfg).unwrap();
    let manly = em_fit_manly(&x, 1, &LambdaMask::all(1, 1, true), &cfg).unwrap();
    let lambda = manly.lambdas.get(0, 0);
    assert!(lambda < -0.3, "lambda = {lambda}");
    assert!(manly.loglik > gauss.loglik + 50.0);
    for pair in manly.loglik_trace.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-6);
    }
}

#[test]
fn masked_entries_stay_zero() {
    let (x, _) = clouds(&[vec![0.0, 0.0], vec![5.0, 5.0]], 60, 4);
    let mask = LambdaMask::all(2, 2, false).with(0, 1, true).with(1, 0, true);
    let fit = em_fit_manly(&x, 2, &mask, &config(2)).unwrap();
    assert_eq!(fit.lambdas.get(0, 0), 0.0);
    assert_eq!(fit.lambdas.get(1, 1), 0.0);
    assert_eq!(fit.n_params, skewselect_core::gmm::gmm_n_params(2, 2) + 2);
}

fn strictly_increasing(path: &[f64]) -> bool {
    path.windows(2).all(|w| w[1] > w[0])
}

#[test]
fn forward_keeps_symmetric_clouds_gaussian() {
    let (x, _) = clouds(&[vec![-8.0, -8.0], vec![8.0, 8.0]], 150, 12);
    let fit = forward_lambda_selection(&x, 2, &config(5)).unwrap();
    assert_eq!(fit.lambdas.mask().count_free(), 0);
    assert_eq!(fit.bic_path.len(), 1);
}

#[test]
fn forward_frees_lambda_for_skewed_cluster() {
    let x = lognormal(500, 9);
    let gauss = em_fit_gmm(&x, 1, &config(1)).unwrap();
    let fit = forward_lambda_selection(&x, 1, &config(1)).unwrap();
    assert_eq!(fit.lambdas.mask().count_free(), 1);
    assert!(fit.bic > gauss.bic);
    assert!(strictly_increasing(&fit.bic_path));
    assert_eq!(*fit.bic_path.last().unwrap(), fit.bic);
}

#[test]
fn forward_terminates_on_tiny_data() {
    let x = DataMatrix::from_rows(&[vec![0.3], vec![1.1], vec![-0.4], vec![2.0], vec![0.9]], vec!["a".into()]).unwrap();
    let fit = forward_lambda_selection(&x, 1, &config(1)).unwrap();
    assert!(fit.bic_path.len() <= 2);
    assert!(strictly_increasing(&fit.bic_path));
}

#[test]
fn backward_on_symmetric_clouds() {
    let (x, _) = clouds(&[vec![-8.0, -8.0], vec![8.0, 8.0]], 150, 12);
    let fit = backward_lambda_selection(&x, 2, &config(5)).unwrap();
    let full_bic = fit.bic_path[0];
    assert!(fit.bic >= full_bic);
    assert!(fit.lambdas.mask().count_free() <= 1, "{:?}", fit.lambdas.mask());
    assert!(strictly_increasing(&fit.bic_path));
}

#[test]
fn backward_single_entry_terminates() {
    let x = lognormal(200, 2);
    let fit = backward_lambda_selection(&x, 1, &config(1)).unwrap();
    assert!(fit.bic_path.len() <= 2);
    assert_eq!(fit.lambdas.mask().count_free(), 1, "the skew is worth its parameter");
}

#[test]
fn backward_keeps_skew_in_simulated_clusters() {
    let data = generate_dataset(&SimulationSpec::skewed_benchmark(500, 77)).unwrap();
    let x = data.data.select_columns(&[0, 1]).unwrap();
    let x = skewselect_core::standardize(&x).unwrap().0;
    let full = em_fit_manly(&x, 3, &LambdaMask::all(3, 2, true), &config(3)).unwrap();
    let fit = backward_lambda_selection(&x, 3, &config(3)).unwrap();
    assert!(fit.bic >= full.bic);
    assert!(fit.lambdas.effective_nonzero() > 0);
    assert!(strictly_increasing(&fit.bic_path));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn inverse_undoes_transform(x in -10.0..10.0f64, lambda in -2.0..2.0f64) {
        let y = manly_transform(x, lambda).unwrap();
        let back = manly_inverse(y, lambda).unwrap();
        prop_assert!((back - x).abs() <= round_trip_bound(x, lambda, y));
    }

    #[test]
    fn transform_is_increasing(x in -10.0..10.0f64, dx in 1e-3..1.0f64, lambda in -2.0..2.0f64) {
        prop_assert!(manly_transform(x + dx, lambda).unwrap() > manly_transform(x, lambda).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn manly_loglik_never_decreases(seed in 0u64..10_000, g in 1usize..=3, p in prop::sample::select(vec![1usize, 2, 5])) {
        let mut r = rng(seed);
        let n = 120;
        let m = DMatrix::from_fn(n, p, |i, _| normal(&mut r).exp() + 3.0 * (i % g) as f64);
        let x = DataMatrix::from_matrix(m).unwrap();
        let fit = em_fit_manly(&x, g, &LambdaMask::all(g, p, true), &config(seed)).unwrap();
        for pair in fit.loglik_trace.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-6, "{} -> {}", pair[0], pair[1]);
        }
    }
}
