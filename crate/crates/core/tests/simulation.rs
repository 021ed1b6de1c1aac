mod common;

use common::rng;
use nalgebra::DMatrix;
use skewselect_core::simulation::{sample_gamma, sample_variance_gamma, VarianceGammaComponent};
use skewselect_core::{generate_dataset, run_study, EmConfig, SelectionMethod, SimulationSpec};

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn gamma_moments() {
    let n = 100_000;
    let mut r = rng(1);
    let (m, v) = mean_var(&sample_gamma(n, 4.0, 4.0, &mut r).unwrap());
    // variance shape / rate^2
    assert!((m - 1.0).abs() < 3.0 * (0.25f64 / n as f64).sqrt(), "{m}");
    assert!((v - 0.25).abs() < 0.01, "{v}");

    let (m, v) = mean_var(&sample_gamma(n, 3.0, 3.0, &mut r).unwrap());
    assert!((m - 1.0).abs() < 3.0 * (1.0f64 / 3.0 / n as f64).sqrt(), "{m}");
    // fourth central moment of gamma(3, 3) is 3k(k + 2) / rate^4 = 45 / 81
    let se_var = ((45.0f64 / 81.0 - 1.0 / 9.0) / n as f64).sqrt();
    assert!((v - 1.0 / 3.0).abs() < 4.0 * se_var, "{v}");

    assert!(sample_gamma(10, 0.0, 1.0, &mut r).is_err());
}

#[test]
fn variance_gamma_means_for_benchmark_components() {
    let n = 100_000;
    let spec = SimulationSpec::skewed_benchmark(10, 0);
    for (k, comp) in spec.components.iter().enumerate() {
        let mut r = rng(10 + k as u64);
        let x = sample_variance_gamma(n, comp, &mut r).unwrap();
        let expected = comp.mean();
        for j in 0..2 {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            let (m, v) = mean_var(&col);
            let se = (v / n as f64).sqrt();
            assert!((m - expected[j]).abs() < 4.0 * se, "component {} variable {j}: {m} vs {}", k + 1, expected[j]);
        }
    }
    assert_eq!(spec.components[0].mean(), vec![3.0, 7.0]);
}

#[test]
fn symmetric_limit_has_no_skew() {
    let comp = VarianceGammaComponent {
        mu: vec![1.0, -1.0],
        sigma: DMatrix::identity(2, 2),
        alpha: vec![0.0, 0.0],
        shape: 200.0,
        psi: 400.0,
        weight: 1.0,
    };
    let n = 100_000;
    let x = sample_variance_gamma(n, &comp, &mut rng(3)).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let (m, v) = mean_var(&col);
        let skew = col.iter().map(|c| (c - m).powi(3)).sum::<f64>() / n as f64 / v.powf(1.5);
        assert!(skew.abs() < 0.05, "{skew}");
    }
}

#[test]
fn invalid_component() {
    let mut comp = SimulationSpec::skewed_benchmark(10, 0).components[0].clone();
    comp.psi = -1.0;
    assert!(sample_variance_gamma(5, &comp, &mut rng(1)).is_err());
}

#[test]
fn dataset_is_reproducible() {
    let spec = SimulationSpec::skewed_benchmark(500, 9);
    let a = generate_dataset(&spec).unwrap();
    let b = generate_dataset(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.data.column_names(), ["V1", "V2", "V3", "V4", "V5"]);
    let c = generate_dataset(&SimulationSpec { seed: 10, ..spec }).unwrap();
    assert_ne!(a.data, c.data);
}

#[test]
fn large_sample_structure() {
    let n = 100_000;
    let ds = generate_dataset(&SimulationSpec::skewed_benchmark(n, 5)).unwrap();
    let labels = ds.labels.as_ref().unwrap();
    for (k, p) in [0.4, 0.4, 0.2].into_iter().enumerate() {
        let share = labels.iter().filter(|&&l| l == k + 1).count() as f64 / n as f64;
        assert!((share - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "class {}: {share}", k + 1);
    }

    let x = ds.data.values();
    let col = |j: usize| -> Vec<f64> { x.column(j).iter().copied().collect() };
    // GIG(shape, 0, psi) columns: mean 2 shape / psi, variance shape / (psi/2)^2
    for (j, shape, rate) in [(2, 3.0, 3.0), (3, 1.0, 1.0)] {
        let (m, v) = mean_var(&col(j));
        let true_var: f64 = shape / (rate * rate);
        assert!((m - shape / rate).abs() < 4.0 * (true_var / n as f64).sqrt());
        assert!((v - true_var).abs() < 0.03 * true_var, "{v}");
    }

    let (m1, v1) = mean_var(&col(0));
    let (m5, v5) = mean_var(&col(4));
    let cov = col(0).iter().zip(col(4)).map(|(a, b)| (a - m1) * (b - m5)).sum::<f64>() / (n as f64 - 1.0);
    let corr = cov / (v1 * v5).sqrt();
    // cov(V5, V1) = 0.6 var(V1), var(V5) = 0.36 var(V1) + 0.16 * 25
    let analytic = 0.6 * v1 / (v1 * (0.36 * v1 + 4.0)).sqrt();
    assert!(corr > 0.5);
    assert!((corr - analytic).abs() < 0.01, "{corr} vs {analytic}");
}

#[test]
fn study_is_deterministic_and_counts_are_bounded() {
    let spec = SimulationSpec::skewed_benchmark(120, 3);
    let cfg = EmConfig { n_starts: 2, ..EmConfig::default() };
    let methods = [SelectionMethod::Gaussian];
    let a = run_study(&spec, 2, &methods, &[1, 2, 3], &cfg).unwrap();
    let b = run_study(&spec, 2, &methods, &[1, 2, 3], &cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.rows.len(), 1);
    let row = &a.rows[0];
    assert_eq!(row.replicates, 2);
    assert!(row.selection_counts.iter().all(|&c| c <= 2));
    assert!(row.mean_ari <= 1.0);

    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("method,n,replicates,failures,mean_g,modal_g,mean_ari,sd_ari,V1,V2,V3,V4,V5\n"));
    assert_eq!(text.lines().count(), 2);
}
