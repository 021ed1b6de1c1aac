//! Gaussian mixtures with unconstrained covariances, fitted by EM.

use nalgebra::{DMatrix, DVector};

use crate::data::DataMatrix;
use crate::em::{self, bic, EmConfig, EmModel, Responsibilities};
use crate::error::{Error, Result};
use crate::linalg::{regularize, weighted_moments, GaussianKernel};

/// A fitted `G`-component Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GaussianMixtureFit {
    pub g: usize,
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub loglik: f64,
    pub bic: f64,
    pub responsibilities: Responsibilities,
    pub n_params: usize,
    /// Observed-data log-likelihood after every iteration of the returned run.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
}

/// Free parameters of a full-covariance mixture: `(G-1) + Gp + Gp(p+1)/2`.
pub fn gmm_n_params(g: usize, p: usize) -> usize {
    (g - 1) + g * p + g * p * (p + 1) / 2
}

/// `log phi_p(x | mu, sigma)`, via the Cholesky factor of `sigma`.
pub fn gaussian_log_density(x: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mu.len() {
        return Err(Error::DimensionMismatch(format!("x has length {}, mu {}", x.len(), mu.len())));
    }
    let kernel = GaussianKernel::new(&DVector::from_column_slice(mu), sigma)?;
    let mut buf = vec![0.0; x.len()];
    Ok(kernel.log_density(x, &mut buf))
}

#[derive(Debug, Clone)]
pub(crate) struct GaussianParams {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

struct GaussianEm<'a> {
    x: &'a DMatrix<f64>,
    ridge: f64,
}

impl EmModel for GaussianEm<'_> {
    type Params = GaussianParams;

    fn m_step(&self, z: &DMatrix<f64>, _prev: Option<&GaussianParams>) -> Result<GaussianParams> {
        let (n, p) = self.x.shape();
        let g = z.ncols();
        let mut params = GaussianParams {
            weights: Vec::with_capacity(g),
            means: Vec::with_capacity(g),
            covariances: Vec::with_capacity(g),
        };
        for k in 0..g {
            let w: Vec<f64> = z.column(k).iter().copied().collect();
            let size: f64 = w.iter().sum();
            if size < (p + 1) as f64 {
                return Err(Error::Degenerate { g });
            }
            let (mean, cov) = weighted_moments(self.x, &w);
            params.weights.push(size / n as f64);
            params.means.push(mean);
            params.covariances.push(regularize(cov, self.ridge)?);
        }
        Ok(params)
    }

    fn e_step(&self, params: &GaussianParams) -> Result<(DMatrix<f64>, f64)> {
        let (n, p) = self.x.shape();
        let g = params.weights.len();
        let kernels = params
            .means
            .iter()
            .zip(&params.covariances)
            .map(|(m, s)| GaussianKernel::new(m, s))
            .collect::<Result<Vec<_>>>()?;
        let log_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();

        let mut z = DMatrix::zeros(n, g);
        let mut row = vec![0.0; p];
        let mut buf = vec![0.0; p];
        let mut lp = vec![0.0; g];
        let mut loglik = 0.0;
        for i in 0..n {
            for j in 0..p {
                row[j] = self.x[(i, j)];
            }
            for k in 0..g {
                lp[k] = log_w[k] + kernels[k].log_density(&row, &mut buf);
            }
            let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..g {
                lp[k] = (lp[k] - max).exp();
                total += lp[k];
            }
            loglik += max + total.ln();
            for k in 0..g {
                z[(i, k)] = lp[k] / total;
            }
        }
        Ok((z, loglik))
    }
}

/// Fits a `g`-component Gaussian mixture by multi-start EM.
pub fn em_fit_gmm(x: &DataMatrix, g: usize, config: &EmConfig) -> Result<GaussianMixtureFit> {
    config.validate()?;
    let n = x.n();
    if g < 1 || n <= g {
        return Err(Error::Precondition(format!("need 1 <= G < n, got G = {g}, n = {n}")));
    }
    let model = GaussianEm { x: x.values(), ridge: config.ridge };
    let run = em::multistart(&model, x.values(), g, config)?;
    let n_params = gmm_n_params(g, x.p());
    Ok(GaussianMixtureFit {
        g,
        weights: run.params.weights,
        means: run.params.means,
        covariances: run.params.covariances,
        loglik: run.loglik,
        bic: bic(run.loglik, n_params, n),
        responsibilities: Responsibilities::from_trusted(run.z),
        n_params,
        loglik_trace: run.trace,
        converged: run.converged,
    })
}

/// Fits every `G` in `g_range` and keeps the largest BIC (smaller `G` on ties).
pub fn select_g(x: &DataMatrix, g_range: &[usize], config: &EmConfig) -> Result<GaussianMixtureFit> {
    select_by_bic(g_range, |g| em_fit_gmm(x, g, config), |f| f.bic)
}

/// Shared "best BIC over G" loop. Fails only when every `G` fails.
pub(crate) fn select_by_bic<F>(
    g_range: &[usize],
    mut fit: impl FnMut(usize) -> Result<F>,
    score: impl Fn(&F) -> f64,
) -> Result<F> {
    if g_range.is_empty() {
        return Err(Error::Precondition("empty G range".into()));
    }
    if g_range.contains(&0) {
        return Err(Error::Precondition("G must be at least 1".into()));
    }
    let mut gs = g_range.to_vec();
    gs.sort_unstable();
    gs.dedup();

    let mut best: Option<F> = None;
    let mut last_err = None;
    for g in gs {
        match fit(g) {
            Ok(f) => {
                if best.as_ref().map_or(true, |b| score(&f) > score(b)) {
                    best = Some(f);
                }
            }
            Err(e) => {
                log::debug!("G = {g} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    best.ok_or_else(|| last_err.expect("non-empty range"))
}
