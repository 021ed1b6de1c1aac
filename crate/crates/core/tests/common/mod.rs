#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use skewselect_core::DataMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Spherical unit-variance clouds, `per` points around each centre.
/// Returns the data and 1-based generating labels.
pub fn clouds(centres: &[Vec<f64>], per: usize, seed: u64) -> (DataMatrix, Vec<usize>) {
    let mut r = rng(seed);
    let p = centres[0].len();
    let n = per * centres.len();
    let mut labels = Vec::with_capacity(n);
    let mut m = DMatrix::zeros(n, p);
    for (k, c) in centres.iter().enumerate() {
        for i in 0..per {
            let row = k * per + i;
            for j in 0..p {
                m[(row, j)] = c[j] + normal(&mut r);
            }
            labels.push(k + 1);
        }
    }
    (DataMatrix::from_matrix(m).unwrap(), labels)
}

/// `exp(Z)` for standard normal `Z`, one column.
pub fn lognormal(n: usize, seed: u64) -> DataMatrix {
    let mut r = rng(seed);
    DataMatrix::from_matrix(DMatrix::from_fn(n, 1, |_, _| normal(&mut r).exp())).unwrap()
}

/// Adjusted Rand index by enumerating all pairs.
pub fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b) = (0u64, 0u64, 0u64);
    let mut pairs = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            pairs += 1;
            both += u64::from(sa && sb);
            only_a += u64::from(sa);
            only_b += u64::from(sb);
        }
    }
    let (s, sa, sb, np) = (both as f64, only_a as f64, only_b as f64, pairs as f64);
    let expected = sa * sb / np;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return if a_equiv_b(a, b) { 1.0 } else { 0.0 };
    }
    (s - expected) / (max - expected)
}

fn a_equiv_b(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// Log-likelihood of a Gaussian mixture evaluated term by term.
pub fn mixture_loglik(x: &DMatrix<f64>, weights: &[f64], means: &[Vec<f64>], covs: &[DMatrix<f64>]) -> f64 {
    let p = x.ncols();
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let mut dens = 0.0;
        for k in 0..weights.len() {
            let inv = covs[k].clone().try_inverse().unwrap();
            let det = covs[k].determinant();
            let d = DMatrix::from_fn(p, 1, |j, _| x[(i, j)] - means[k][j]);
            let q = (d.transpose() * &inv * &d)[(0, 0)];
            dens += weights[k] * (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(p as i32) * det).sqrt();
        }
        total += dens.ln();
    }
    total
}
