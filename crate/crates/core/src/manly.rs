//! Mixtures of Manly-transformed Gaussians.
//!
//! Each component `g` carries its own vector of transformation parameters
//! `lambda_g`, and its density in the original space is
//!
//! ```text
//! f_g(x) = phi_p(T(x | lambda_g) | mu_g, Sigma_g) * exp(lambda_g' x)
//! T(x | l) = (exp(l x) - 1) / l   (x when l = 0)
//! ```
//!
//! Fitting is generalized EM. Given responsibilities, each free entry of
//! `lambda_g` is updated in turn by a bounded 1-D search on the profile of
//! the expected complete-data log-likelihood (with `mu_g` and `Sigma_g` at
//! their closed-form optima), and an update is only kept when it does not
//! lower that profile. The observed-data log-likelihood therefore never
//! decreases, up to the accuracy of the inner search.
//!
//! Entries can be fixed at zero through a [`LambdaMask`]; forward and
//! backward stepwise selection over that mask is driven by BIC.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::em::{self, bic, EmConfig, EmModel, EmRun, Responsibilities};
use crate::error::{Error, Result};
use crate::gmm::{gmm_n_params, gaussian_log_density, select_by_bic};
use crate::linalg::{regularize, weighted_moments, GaussianKernel};
use crate::optimize::maximize_bounded;

/// Below this magnitude the transform is evaluated by its Taylor series and
/// selection reports treat the parameter as zero.
pub const LAMBDA_EPS: f64 = 1e-5;

/// Largest exponent `lambda * x` the fitter lets a search visit.
const EXP_LIMIT: f64 = 700.0;

/// `T(x | lambda)`. Continuous in `lambda` at zero.
pub fn manly_transform(x: f64, lambda: f64) -> Result<f64> {
    if !x.is_finite() || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite input x = {x}, lambda = {lambda}")));
    }
    if lambda * x > EXP_LIMIT {
        return Err(Error::Overflow { x, lambda });
    }
    Ok(transform(x, lambda))
}

#[inline]
fn transform(x: f64, lambda: f64) -> f64 {
    if lambda.abs() < LAMBDA_EPS {
        x + lambda * x * x / 2.0 + lambda * lambda * x * x * x / 6.0
    } else {
        (lambda * x).exp_m1() / lambda
    }
}

/// Inverse of [`manly_transform`]: `ln(lambda * y + 1) / lambda`.
pub fn manly_inverse(y: f64, lambda: f64) -> Result<f64> {
    if !y.is_finite() || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite input y = {y}, lambda = {lambda}")));
    }
    if lambda.abs() < LAMBDA_EPS {
        let ly = lambda * y;
        return Ok(y * (1.0 - ly / 2.0 + ly * ly / 3.0));
    }
    if lambda * y + 1.0 <= 0.0 {
        return Err(Error::Domain { y, lambda });
    }
    Ok((lambda * y).ln_1p() / lambda)
}

/// Log of the Jacobian `exp(lambda' x)`.
pub fn log_jacobian(x: &[f64], lambda: &[f64]) -> f64 {
    x.iter().zip(lambda).map(|(a, b)| a * b).sum()
}

/// Log-density of one Manly component at `x`.
pub fn manly_component_logdensity(x: &[f64], lambda: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    if x.len() != lambda.len() {
        return Err(Error::DimensionMismatch(format!("x has length {}, lambda {}", x.len(), lambda.len())));
    }
    let y = x.iter().zip(lambda).map(|(&xi, &li)| manly_transform(xi, li)).collect::<Result<Vec<_>>>()?;
    Ok(gaussian_log_density(&y, mu, sigma)? + log_jacobian(x, lambda))
}

/// Which transformation parameters are free (`true`) or fixed at zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LambdaMask {
    g: usize,
    p: usize,
    free: Vec<bool>,
}

impl LambdaMask {
    pub fn all(g: usize, p: usize, free: bool) -> Self {
        Self { g, p, free: vec![free; g * p] }
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn is_free(&self, g: usize, j: usize) -> bool {
        self.free[g * self.p + j]
    }

    pub fn with(&self, g: usize, j: usize, free: bool) -> Self {
        let mut next = self.clone();
        next.free[g * self.p + j] = free;
        next
    }

    pub fn count_free(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    /// `(g, j)` pairs with the given state, row-major.
    pub fn entries(&self, free: bool) -> Vec<(usize, usize)> {
        (0..self.g)
            .flat_map(|g| (0..self.p).map(move |j| (g, j)))
            .filter(|&(g, j)| self.is_free(g, j) == free)
            .collect()
    }
}

/// `G x p` transformation parameters together with their mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaMatrix {
    values: Vec<f64>,
    mask: LambdaMask,
}

impl LambdaMatrix {
    pub fn zeros(mask: LambdaMask) -> Self {
        Self { values: vec![0.0; mask.g * mask.p], mask }
    }

    /// Builds from row-major values; masked-out entries must be zero.
    pub fn new(values: Vec<f64>, mask: LambdaMask) -> Result<Self> {
        if values.len() != mask.g * mask.p {
            return Err(Error::DimensionMismatch(format!(
                "{} lambda values for a {}x{} mask",
                values.len(),
                mask.g,
                mask.p
            )));
        }
        for (k, (&v, &free)) in values.iter().zip(&mask.free).enumerate() {
            if !v.is_finite() || (!free && v != 0.0) {
                return Err(Error::InvalidParameter(format!("lambda entry {k} = {v} violates mask or is not finite")));
            }
        }
        Ok(Self { values, mask })
    }

    pub fn get(&self, g: usize, j: usize) -> f64 {
        self.values[g * self.mask.p + j]
    }

    pub fn row(&self, g: usize) -> &[f64] {
        &self.values[g * self.mask.p..(g + 1) * self.mask.p]
    }

    pub fn mask(&self) -> &LambdaMask {
        &self.mask
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.mask.g).map(|g| self.row(g).to_vec()).collect()
    }

    /// Same values under a new mask; entries the new mask fixes become zero.
    pub fn remasked(&self, mask: LambdaMask) -> Self {
        let values = self.values.iter().zip(&mask.free).map(|(&v, &f)| if f { v } else { 0.0 }).collect();
        Self { values, mask }
    }

    /// Entries whose magnitude is at least [`LAMBDA_EPS`].
    pub fn effective_nonzero(&self) -> usize {
        self.values.iter().filter(|v| v.abs() >= LAMBDA_EPS).count()
    }
}

/// A fitted Manly mixture. Means and covariances live in the transformed space.
#[derive(Debug, Clone)]
pub struct ManlyMixtureFit {
    pub g: usize,
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub lambdas: LambdaMatrix,
    pub loglik: f64,
    pub bic: f64,
    pub responsibilities: Responsibilities,
    pub n_params: usize,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// BIC of the starting model followed by the BIC after every accepted
    /// stepwise move. A single entry for fits without mask selection.
    pub bic_path: Vec<f64>,
}

/// How the transformation mask is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaSelection {
    /// Every parameter free.
    Full,
    /// Start Gaussian, free one parameter at a time while BIC improves.
    Forward,
    /// Start fully skewed, zero one parameter at a time while BIC improves.
    Backward,
}

#[derive(Debug, Clone)]
pub(crate) struct ManlyParams {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    /// Row-major `G x p`.
    lambda: Vec<f64>,
}

struct ManlyEm<'a> {
    x: &'a DMatrix<f64>,
    mask: &'a LambdaMask,
    start_lambda: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    ridge: f64,
    tol: f64,
    max_evals: usize,
}

impl<'a> ManlyEm<'a> {
    fn new(x: &'a DMatrix<f64>, mask: &'a LambdaMask, start: Option<&LambdaMatrix>, config: &EmConfig) -> Self {
        let p = x.ncols();
        let mut lower = vec![-config.lambda_bound; p];
        let mut upper = vec![config.lambda_bound; p];
        for j in 0..p {
            let col = x.column(j);
            let hi = col.max();
            let lo = col.min();
            if hi > 0.0 {
                upper[j] = upper[j].min(EXP_LIMIT / hi);
                lower[j] = lower[j].max(-EXP_LIMIT / hi);
            }
            if lo < 0.0 {
                upper[j] = upper[j].min(EXP_LIMIT / -lo);
                lower[j] = lower[j].max(-EXP_LIMIT / -lo);
            }
        }
        let start_lambda = match start {
            Some(l) => (0..mask.g * p)
                .map(|k| {
                    let (g, j) = (k / p, k % p);
                    if mask.is_free(g, j) {
                        l.get(g, j).clamp(lower[j], upper[j])
                    } else {
                        0.0
                    }
                })
                .collect(),
            None => vec![0.0; mask.g * p],
        };
        Self {
            x,
            mask,
            start_lambda,
            lower,
            upper,
            ridge: config.ridge,
            tol: config.lambda_tol,
            max_evals: config.lambda_max_evals,
        }
    }

    fn transformed(&self, lambda: &[f64]) -> DMatrix<f64> {
        let mut y = self.x.clone();
        for (j, mut col) in y.column_iter_mut().enumerate() {
            let l = lambda[j];
            if l != 0.0 {
                col.apply(|v| *v = transform(*v, l));
            }
        }
        y
    }

    /// Cyclic update of the free entries of one component's parameters.
    /// Returns the transformed data under the final parameters.
    fn update_lambda_row(&self, k: usize, w: &[f64], lambda: &mut [f64]) -> Result<DMatrix<f64>> {
        let (n, p) = self.x.shape();
        let size: f64 = w.iter().sum();
        let mut y = self.transformed(lambda);
        for j in 0..p {
            if !self.mask.is_free(k, j) {
                continue;
            }
            let xj: Vec<f64> = self.x.column(j).iter().copied().collect();
            let wx: f64 = w.iter().zip(&xj).map(|(a, b)| a * b).sum();

            // Remaining transformed columns, centred at their weighted means,
            // and the Cholesky factor of their weighted covariance.
            let others: Vec<usize> = (0..p).filter(|&c| c != j).collect();
            let mut centred = DMatrix::zeros(n, others.len());
            for (c, &col) in others.iter().enumerate() {
                let src = y.column(col);
                let m: f64 = src.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / size;
                for i in 0..n {
                    centred[(i, c)] = src[i] - m;
                }
            }
            let lower = if others.is_empty() {
                None
            } else {
                let mut a = DMatrix::zeros(others.len(), others.len());
                for r in 0..others.len() {
                    for c in 0..=r {
                        let mut acc = 0.0;
                        for i in 0..n {
                            acc += w[i] * centred[(i, r)] * centred[(i, c)];
                        }
                        a[(r, c)] = acc / size;
                        a[(c, r)] = acc / size;
                    }
                }
                let chol = Cholesky::new(regularize(a, self.ridge)?).ok_or(Error::NotPositiveDefinite)?;
                Some(chol.l())
            };

            let mut ycol = vec![0.0; n];
            let mut cross = vec![0.0; others.len()];
            let mut profile = |l: f64| -> f64 {
                let mut mean = 0.0;
                for i in 0..n {
                    ycol[i] = transform(xj[i], l);
                    mean += w[i] * ycol[i];
                }
                mean /= size;
                let mut var = 0.0;
                for i in 0..n {
                    let d = ycol[i] - mean;
                    var += w[i] * d * d;
                }
                var /= size;
                let mut schur = var;
                if let Some(lower) = &lower {
                    // schur = var - b' A^{-1} b, with A = L L'
                    for c in 0..cross.len() {
                        let col = centred.column(c);
                        let mut acc = 0.0;
                        for i in 0..n {
                            acc += w[i] * ycol[i] * col[i];
                        }
                        acc /= size;
                        for r in 0..c {
                            acc -= lower[(c, r)] * cross[r];
                        }
                        cross[c] = acc / lower[(c, c)];
                        schur -= cross[c] * cross[c];
                    }
                }
                if !(schur > 0.0) || !schur.is_finite() {
                    return -f64::MAX;
                }
                -0.5 * size * schur.ln() + l * wx
            };

            let current = lambda[j];
            let at_current = profile(current);
            let best = maximize_bounded(&mut profile, self.lower[j], self.upper[j], self.tol, self.max_evals)?;
            if best.value > at_current {
                lambda[j] = best.arg;
                for i in 0..n {
                    y[(i, j)] = transform(xj[i], best.arg);
                }
            }
        }
        Ok(y)
    }
}

impl EmModel for ManlyEm<'_> {
    type Params = ManlyParams;

    fn m_step(&self, z: &DMatrix<f64>, prev: Option<&ManlyParams>) -> Result<ManlyParams> {
        let (n, p) = self.x.shape();
        let g = z.ncols();
        let mut lambda = prev.map_or_else(|| self.start_lambda.clone(), |pr| pr.lambda.clone());
        let mut params = ManlyParams {
            weights: Vec::with_capacity(g),
            means: Vec::with_capacity(g),
            covariances: Vec::with_capacity(g),
            lambda: Vec::new(),
        };
        for k in 0..g {
            let w: Vec<f64> = z.column(k).iter().copied().collect();
            let size: f64 = w.iter().sum();
            if size < (p + 1) as f64 {
                return Err(Error::Degenerate { g });
            }
            let row = &mut lambda[k * p..(k + 1) * p];
            let y = self.update_lambda_row(k, &w, row)?;
            let (mean, cov) = weighted_moments(&y, &w);
            params.weights.push(size / n as f64);
            params.means.push(mean);
            params.covariances.push(regularize(cov, self.ridge)?);
        }
        params.lambda = lambda;
        Ok(params)
    }

    fn e_step(&self, params: &ManlyParams) -> Result<(DMatrix<f64>, f64)> {
        let (n, p) = self.x.shape();
        let g = params.weights.len();
        let mut lp = DMatrix::zeros(n, g);
        let mut row = vec![0.0; p];
        let mut buf = vec![0.0; p];
        for k in 0..g {
            let lambda = &params.lambda[k * p..(k + 1) * p];
            let kernel = GaussianKernel::new(&params.means[k], &params.covariances[k])?;
            let y = self.transformed(lambda);
            let log_w = params.weights[k].ln();
            for i in 0..n {
                let mut jac = 0.0;
                for j in 0..p {
                    row[j] = y[(i, j)];
                    jac += lambda[j] * self.x[(i, j)];
                }
                lp[(i, k)] = log_w + kernel.log_density(&row, &mut buf) + jac;
            }
        }
        let mut z = DMatrix::zeros(n, g);
        let mut loglik = 0.0;
        for i in 0..n {
            let max = (0..g).map(|k| lp[(i, k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..g {
                let e = (lp[(i, k)] - max).exp();
                z[(i, k)] = e;
                total += e;
            }
            for k in 0..g {
                z[(i, k)] /= total;
            }
            loglik += max + total.ln();
        }
        Ok((z, loglik))
    }
}

fn check_fit_inputs(x: &DataMatrix, g: usize, mask: &LambdaMask) -> Result<()> {
    let n = x.n();
    if g < 1 || n <= g {
        return Err(Error::Precondition(format!("need 1 <= G < n, got G = {g}, n = {n}")));
    }
    if mask.g != g || mask.p != x.p() {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, expected {g}x{}",
            mask.g,
            mask.p,
            x.p()
        )));
    }
    Ok(())
}

fn finish(x: &DataMatrix, mask: &LambdaMask, run: EmRun<ManlyParams>, bic_path: Vec<f64>) -> ManlyMixtureFit {
    let g = mask.g;
    let n_params = gmm_n_params(g, x.p()) + mask.count_free();
    let bic_value = bic(run.loglik, n_params, x.n());
    let mut path = bic_path;
    if path.is_empty() {
        path.push(bic_value);
    }
    ManlyMixtureFit {
        g,
        weights: run.params.weights,
        means: run.params.means,
        covariances: run.params.covariances,
        lambdas: LambdaMatrix { values: run.params.lambda, mask: mask.clone() },
        loglik: run.loglik,
        bic: bic_value,
        responsibilities: Responsibilities::from_trusted(run.z),
        n_params,
        loglik_trace: run.trace,
        converged: run.converged,
        bic_path: path,
    }
}

/// Fits a `g`-component Manly mixture with the given mask by multi-start EM.
/// With an all-false mask this is exactly a Gaussian mixture fit.
pub fn em_fit_manly(x: &DataMatrix, g: usize, mask: &LambdaMask, config: &EmConfig) -> Result<ManlyMixtureFit> {
    config.validate()?;
    check_fit_inputs(x, g, mask)?;
    let model = ManlyEm::new(x.values(), mask, None, config);
    let run = em::multistart(&model, x.values(), g, config)?;
    Ok(finish(x, mask, run, Vec::new()))
}

/// Runs at most `budget` EM iterations from given responsibilities and parameters.
fn warm_run(
    x: &DataMatrix,
    mask: &LambdaMask,
    z: &DMatrix<f64>,
    lambda: &LambdaMatrix,
    budget: usize,
    config: &EmConfig,
) -> Result<EmRun<ManlyParams>> {
    let model = ManlyEm::new(x.values(), mask, Some(lambda), config);
    em::iterate(&model, z.clone(), None, Vec::new(), budget, config.rel_tol)
}

fn continue_run(x: &DataMatrix, mask: &LambdaMask, run: EmRun<ManlyParams>, config: &EmConfig) -> Result<EmRun<ManlyParams>> {
    let model = ManlyEm::new(x.values(), mask, None, config);
    em::resume(&model, run, config.max_iter.max(config.candidate_iter + 1), config.rel_tol)
}

/// Fits `g` components starting from warm responsibilities and parameters,
/// iterating to convergence.
pub fn em_fit_manly_warm(
    x: &DataMatrix,
    mask: &LambdaMask,
    z: &Responsibilities,
    lambda: &LambdaMatrix,
    config: &EmConfig,
) -> Result<ManlyMixtureFit> {
    config.validate()?;
    check_fit_inputs(x, mask.g, mask)?;
    if z.n() != x.n() || z.g() != mask.g {
        return Err(Error::DimensionMismatch("warm-start responsibilities do not match data and mask".into()));
    }
    let run = warm_run(x, mask, z.matrix(), lambda, config.max_iter, config)?;
    Ok(finish(x, mask, run, Vec::new()))
}

fn stepwise(x: &DataMatrix, start: ManlyMixtureFit, forward: bool, config: &EmConfig) -> Result<ManlyMixtureFit> {
    let mut incumbent = start;
    let mut path = vec![incumbent.bic];
    loop {
        let mask = incumbent.lambdas.mask().clone();
        // forward frees a fixed entry, backward fixes a free one
        let moves = mask.entries(!forward);
        if moves.is_empty() {
            break;
        }
        let candidates: Vec<(LambdaMask, EmRun<ManlyParams>, f64)> = moves
            .par_iter()
            .filter_map(|&(g, j)| {
                let cand_mask = mask.with(g, j, forward);
                let start = incumbent.lambdas.remasked(cand_mask.clone());
                let run = warm_run(
                    x,
                    &cand_mask,
                    incumbent.responsibilities.matrix(),
                    &start,
                    config.candidate_iter.max(1),
                    config,
                )
                .map_err(|e| log::debug!("candidate ({g}, {j}) skipped: {e}"))
                .ok()?;
                let n_params = gmm_n_params(mask.g, x.p()) + cand_mask.count_free();
                let score = bic(run.loglik, n_params, x.n());
                Some((cand_mask, run, score))
            })
            .collect();

        // first maximum in row-major order wins ties
        let mut best: Option<(LambdaMask, EmRun<ManlyParams>, f64)> = None;
        for cand in candidates {
            if best.as_ref().map_or(true, |b| cand.2 > b.2) {
                best = Some(cand);
            }
        }
        let Some((cand_mask, run, score)) = best else { break };
        if !(score > incumbent.bic) {
            break;
        }
        let refit = match continue_run(x, &cand_mask, run, config) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("refit of accepted candidate failed: {e}");
                break;
            }
        };
        let next = finish(x, &cand_mask, refit, Vec::new());
        debug_assert!(next.bic >= score - 1e-6 * score.abs().max(1.0));
        if !(next.bic > incumbent.bic) {
            break;
        }
        path.push(next.bic);
        incumbent = next;
    }
    incumbent.bic_path = path;
    Ok(incumbent)
}

/// Stepwise freeing of transformation parameters, starting from a Gaussian mixture.
pub fn forward_lambda_selection(x: &DataMatrix, g: usize, config: &EmConfig) -> Result<ManlyMixtureFit> {
    let start = em_fit_manly(x, g, &LambdaMask::all(g, x.p(), false), config)?;
    stepwise(x, start, true, config)
}

/// Stepwise zeroing of transformation parameters, starting from a full Manly mixture.
pub fn backward_lambda_selection(x: &DataMatrix, g: usize, config: &EmConfig) -> Result<ManlyMixtureFit> {
    let start = em_fit_manly(x, g, &LambdaMask::all(g, x.p(), true), config)?;
    stepwise(x, start, false, config)
}

/// Fits `g` components under the given selection strategy.
pub fn fit_manly(x: &DataMatrix, g: usize, selection: LambdaSelection, config: &EmConfig) -> Result<ManlyMixtureFit> {
    match selection {
        LambdaSelection::Full => em_fit_manly(x, g, &LambdaMask::all(g, x.p(), true), config),
        LambdaSelection::Forward => forward_lambda_selection(x, g, config),
        LambdaSelection::Backward => backward_lambda_selection(x, g, config),
    }
}

/// Best-BIC Manly fit over `g_range` (smaller `G` on ties).
pub fn select_g_manly(
    x: &DataMatrix,
    g_range: &[usize],
    selection: LambdaSelection,
    config: &EmConfig,
) -> Result<ManlyMixtureFit> {
    select_by_bic(g_range, |g| fit_manly(x, g, selection, config), |f| f.bic)
}
