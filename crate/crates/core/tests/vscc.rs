mod common;

use common::{clouds, normal, rng};
use nalgebra::DMatrix;
use proptest::prelude::*;
use skewselect_core::vscc::build_subsets_from_correlations;
use skewselect_core::{
    select_g, standardize, vscc_classify, vscc_gaussian, vscc_manly, ClassifyMode, DataMatrix, EmConfig, LambdaSelection,
    SelectionMethod,
};

fn config(seed: u64) -> EmConfig {
    EmConfig { n_starts: 4, ..EmConfig::default() }.with_seed(seed)
}

/// Two clusters apart along the first variable, independent noise after it.
fn separated_on_first(n_per: usize, noise_cols: usize, seed: u64) -> (DataMatrix, Vec<usize>) {
    let mut r = rng(seed);
    let n = 2 * n_per;
    let labels: Vec<usize> = (0..n).map(|i| 1 + i / n_per).collect();
    let m = DMatrix::from_fn(n, 1 + noise_cols, |i, j| if j == 0 { 6.0 * labels[i] as f64 } else { 0.0 } + normal(&mut r));
    (DataMatrix::from_matrix(m).unwrap(), labels)
}

#[test]
fn separating_variable_is_chosen() {
    let (x, _) = separated_on_first(150, 2, 3);
    let res = vscc_gaussian(&x, &[1, 2, 3, 4], &config(1)).unwrap();
    assert!(res.chosen_columns.contains(&0), "{:?}", res.chosen_columns);
    assert_eq!(res.family.sort_order[0], 0);
    res.family.certify().unwrap();
}

#[test]
fn single_column_selects_itself() {
    let (x, _) = clouds(&[vec![-4.0], vec![4.0]], 60, 2);
    let cfg = config(7);
    let res = vscc_gaussian(&x, &[1, 2, 3], &cfg).unwrap();
    assert_eq!(res.chosen_columns, vec![0]);
    let direct = select_g(&standardize(&x).unwrap().0, &[1, 2, 3], &cfg).unwrap();
    assert_eq!(res.final_fit.g(), direct.g);
    assert!((res.final_fit.loglik() - direct.loglik).abs() < 1e-9);
}

#[test]
fn independent_noise_variable_is_dropped() {
    // two Gaussian clusters in V1, V2 plus Noise1 ~ N(4, 2) and
    // Noise2 = 0.8 V2 + 0.2 Z with Z ~ N(0, 5)
    let mut r = rng(42);
    let n_per = 150;
    let n = 2 * n_per;
    let mut m = DMatrix::zeros(n, 4);
    for i in 0..n {
        let g = i / n_per;
        m[(i, 0)] = if g == 0 { 0.0 } else { 5.0 } + normal(&mut r);
        m[(i, 1)] = if g == 0 { 0.0 } else { 5.0 } + normal(&mut r);
        m[(i, 2)] = 4.0 + 2f64.sqrt() * normal(&mut r);
        m[(i, 3)] = 0.8 * m[(i, 1)] + 0.2 * 5.0 * normal(&mut r);
    }
    let names = ["V1", "V2", "Noise1", "Noise2"].map(String::from).to_vec();
    let x = DataMatrix::new(m, names).unwrap();
    let res = vscc_gaussian(&x, &[1, 2, 3, 4], &config(5)).unwrap();
    assert!(!res.chosen_subset.contains(&"Noise1".to_string()), "{:?}", res.chosen_subset);
    res.family.certify().unwrap();
}

#[test]
fn forward_on_gaussian_data_matches_gaussian_selection() {
    let (x, _) = separated_on_first(100, 1, 8);
    let x = standardize(&x).unwrap().0;
    let cfg = config(3);
    let manly = vscc_manly(&x, &[1, 2, 3], LambdaSelection::Forward, &cfg).unwrap();
    let gauss = vscc_gaussian(&x, &[1, 2, 3], &cfg).unwrap();
    assert_eq!(manly.method, SelectionMethod::ManlyForward);
    assert_eq!(manly.initial_fit.lambdas().unwrap().effective_nonzero(), 0);
    assert_eq!(manly.chosen_columns, gauss.chosen_columns);
    assert_eq!(manly.final_fit.g(), gauss.final_fit.g());
    for f in manly.fits.iter().flatten() {
        assert!(f.bic_path().windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn classify_single_class_gives_column_variances() {
    let (x, _) = separated_on_first(40, 2, 11);
    let x = standardize(&x).unwrap().0;
    let n = x.n();
    let fam = vscc_classify(&x, &vec![1; n], ClassifyMode::Gaussian, &config(1)).unwrap();
    for j in 0..x.p() {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let pop = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((fam.w[j] - pop).abs() < 1e-12);
        assert!((pop - (n as f64 - 1.0) / n as f64).abs() < 1e-12);
    }
}

#[test]
fn classify_ranks_separating_column_first() {
    let (x, labels) = separated_on_first(30, 1, 12);
    for mode in [ClassifyMode::Gaussian, ClassifyMode::Manly] {
        let fam = vscc_classify(&x, &labels, mode, &config(1)).unwrap();
        assert_eq!(fam.sort_order[0], 0, "{mode:?}");
        assert!(fam.subsets.iter().all(|s| s[0] == 0));
        fam.certify().unwrap();
    }
    // brute-force w for the Gaussian mode
    let sd = |j: usize| {
        let c = x.column(j);
        let m = c.sum() / c.len() as f64;
        (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64).sqrt()
    };
    let fam = vscc_classify(&x, &labels, ClassifyMode::Gaussian, &config(1)).unwrap();
    for j in 0..2 {
        let mut total = 0.0;
        for class in 1..=2 {
            let vals: Vec<f64> = (0..x.n()).filter(|&i| labels[i] == class).map(|i| x.values()[(i, j)] / sd(j)).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            total += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        }
        assert!((fam.w[j] - total / x.n() as f64).abs() < 1e-12);
    }
}

#[test]
fn classify_label_length_mismatch() {
    let (x, labels) = separated_on_first(30, 1, 12);
    assert!(vscc_classify(&x, &labels[1..], ClassifyMode::Gaussian, &config(1)).is_err());
}

fn family_inputs() -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>)> {
    (1usize..7).prop_flat_map(|p| {
        (
            prop::collection::vec(-1.0..1.0f64, p * p),
            prop::collection::vec(0.0..1.5f64, p),
        )
            .prop_map(move |(raw, w)| {
                let a = DMatrix::from_vec(p, p, raw);
                // a correlation matrix from a Gram matrix
                let s = &a * a.transpose() + DMatrix::identity(p, p) * 0.05;
                let d = DMatrix::from_fn(p, p, |i, j| s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt());
                (d, w)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_family_certifies((corr, w) in family_inputs()) {
        let fam = build_subsets_from_correlations(corr, &w).unwrap();
        prop_assert!(fam.certify().is_ok());
        let min = fam.sort_order[0];
        prop_assert!(fam.subsets.iter().all(|s| s.contains(&min)));
        prop_assert!(w.iter().all(|&v| v >= w[min]));
    }

    #[test]
    fn uncertainty_is_bounded(rows in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 3), 2..20)) {
        let n = rows.len();
        let z = DMatrix::from_fn(n, 3, |i, k| rows[i][k] / rows[i].iter().sum::<f64>());
        let u = skewselect_core::uncertainty(&skewselect_core::Responsibilities::new(z).unwrap());
        prop_assert!(u >= 0.0 && u <= n as f64 * (1.0 - 1.0 / 3.0) + 1e-12);
    }
}
