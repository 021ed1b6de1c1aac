//! Small dense helpers shared by the mixture fitters.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal log-density with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub(crate) struct GaussianKernel {
    mean: Vec<f64>,
    /// Row-major lower-triangular factor.
    lower: Vec<f64>,
    log_norm: f64,
    p: usize,
}

impl GaussianKernel {
    pub fn new(mean: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if sigma.shape() != (p, p) {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, mean has length {p}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let chol = Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let mut lower = vec![0.0; p * p];
        let mut log_det = 0.0;
        for r in 0..p {
            for c in 0..=r {
                lower[r * p + c] = l[(r, c)];
            }
            log_det += 2.0 * l[(r, r)].ln();
        }
        Ok(Self {
            mean: mean.iter().copied().collect(),
            lower,
            log_norm: -0.5 * (p as f64 * LN_2PI + log_det),
            p,
        })
    }

    /// `buf` must have length `p`.
    pub fn log_density(&self, x: &[f64], buf: &mut [f64]) -> f64 {
        let p = self.p;
        let mut quad = 0.0;
        for r in 0..p {
            let row = &self.lower[r * p..r * p + r];
            let mut acc = x[r] - self.mean[r];
            for (c, l) in row.iter().enumerate() {
                acc -= l * buf[c];
            }
            let v = acc / self.lower[r * p + r];
            buf[r] = v;
            quad += v * v;
        }
        self.log_norm - 0.5 * quad
    }
}

/// Adds `eps * tr(S)/p` to the diagonal (growing `eps` tenfold) until `S` is SPD.
pub(crate) fn regularize(mut sigma: DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    if Cholesky::new(sigma.clone()).is_some() {
        return Ok(sigma);
    }
    let p = sigma.nrows();
    let scale = (sigma.trace() / p as f64).abs().max(f64::MIN_POSITIVE);
    let mut eps = if eps > 0.0 { eps } else { 1e-10 };
    for _ in 0..12 {
        let bump = eps * scale;
        let mut attempt = sigma.clone();
        for d in 0..p {
            attempt[(d, d)] += bump;
        }
        if Cholesky::new(attempt.clone()).is_some() {
            sigma = attempt;
            return Ok(sigma);
        }
        eps *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

/// Weighted mean and covariance (divisor `sum(w)`) of the rows of `x`.
pub(crate) fn weighted_moments(x: &DMatrix<f64>, w: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = x.shape();
    let sw: f64 = w.iter().sum();
    let mut mean = DVector::zeros(p);
    for j in 0..p {
        let col = x.column(j);
        let mut acc = 0.0;
        for i in 0..n {
            acc += w[i] * col[i];
        }
        mean[j] = acc / sw;
    }
    let mut centred = x.clone();
    for j in 0..p {
        let m = mean[j];
        centred.column_mut(j).apply(|v| *v -= m);
    }
    let mut cov = DMatrix::zeros(p, p);
    for a in 0..p {
        let ca = centred.column(a);
        for b in 0..=a {
            let cb = centred.column(b);
            let mut acc = 0.0;
            for i in 0..n {
                acc += w[i] * ca[i] * cb[i];
            }
            cov[(a, b)] = acc / sw;
            cov[(b, a)] = acc / sw;
        }
    }
    (mean, cov)
}

/// Pearson correlation matrix of the columns of `x`.
pub(crate) fn correlation_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let w = vec![1.0; n];
    let (_, cov) = weighted_moments(x, &w);
    DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            1.0
        } else {
            let denom = (cov[(a, a)] * cov[(b, b)]).sqrt();
            if denom > 0.0 {
                cov[(a, b)] / denom
            } else {
                0.0
            }
        }
    })
}
