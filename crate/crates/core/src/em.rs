//! Shared EM machinery: configuration, responsibilities, the iteration loop
//! and the multi-start driver used by both mixture families.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::kmeans_labels;

/// Settings for EM fitting and the Manly parameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Iteration cap for one fit, short start-up runs included.
    pub max_iter: usize,
    /// Stop when `|l_t - l_{t-1}| / (1 + |l_t|)` falls below this.
    pub rel_tol: f64,
    /// Number of k-means starts.
    pub n_starts: usize,
    pub seed: u64,
    /// Relative diagonal loading applied when a covariance is not SPD.
    pub ridge: f64,
    /// EM iterations given to every start before the best one is continued.
    pub init_iter: usize,
    /// EM iterations given to each candidate in stepwise lambda selection.
    pub candidate_iter: usize,
    /// Transformation parameters are restricted to `[-lambda_bound, lambda_bound]`.
    pub lambda_bound: f64,
    pub lambda_tol: f64,
    pub lambda_max_evals: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            rel_tol: 1e-8,
            n_starts: 10,
            seed: 0,
            ridge: 1e-6,
            init_iter: 10,
            candidate_iter: 50,
            lambda_bound: 5.0,
            lambda_tol: 1e-6,
            lambda_max_evals: 100,
        }
    }
}

impl EmConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("rel_tol must be positive".into()));
        }
        if self.n_starts < 1 {
            return Err(Error::InvalidParameter("n_starts must be at least 1".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidParameter("ridge must be non-negative".into()));
        }
        if !(self.lambda_bound > 0.0) || !self.lambda_bound.is_finite() {
            return Err(Error::InvalidParameter("lambda_bound must be positive and finite".into()));
        }
        if !(self.lambda_tol > 0.0) || self.lambda_max_evals < 3 {
            return Err(Error::InvalidParameter("lambda search needs tol > 0 and at least 3 evaluations".into()));
        }
        Ok(())
    }
}

/// Row-stochastic `n x G` matrix of posterior membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    z: DMatrix<f64>,
}

impl Responsibilities {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() == 0 || z.ncols() == 0 {
            return Err(Error::InvalidData("empty responsibility matrix".into()));
        }
        for (i, row) in z.row_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidData(format!("row {} has entries outside [0, 1]", i + 1)));
            }
            let s = row.sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidData(format!("row {} sums to {s}", i + 1)));
            }
        }
        Ok(Self { z })
    }

    pub(crate) fn from_trusted(z: DMatrix<f64>) -> Self {
        Self { z }
    }

    /// One-hot responsibilities from labels `1..=g`.
    pub fn from_labels(labels: &[usize], g: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidData("no labels".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > g) {
            return Err(Error::InvalidData(format!("label {bad} outside 1..={g}")));
        }
        let zero_based: Vec<usize> = labels.iter().map(|l| l - 1).collect();
        Ok(Self { z: one_hot(&zero_based, g) })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn g(&self) -> usize {
        self.z.ncols()
    }

    /// Soft component sizes `sum_i z_ig`.
    pub fn sizes(&self) -> Vec<f64> {
        self.z.column_iter().map(|c| c.sum()).collect()
    }
}

/// Most probable component for each row, as labels `1..=G`; ties go to the lowest index.
pub fn hard_labels(z: &Responsibilities) -> Vec<usize> {
    z.z.row_iter()
        .map(|row| {
            let mut best = 0;
            for g in 1..row.len() {
                if row[g] > row[best] {
                    best = g;
                }
            }
            best + 1
        })
        .collect()
}

/// `2 * loglik - n_params * ln(n)`; larger is better.
pub fn bic(loglik: f64, n_params: usize, n: usize) -> f64 {
    2.0 * loglik - n_params as f64 * (n as f64).ln()
}

/// Mixes a base seed with a counter (splitmix64 finalizer), giving
/// independent streams for starts and replicates.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn one_hot(labels: &[usize], g: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(labels.len(), g);
    for (i, &l) in labels.iter().enumerate() {
        z[(i, l)] = 1.0;
    }
    z
}

/// A mixture family as seen by the EM loop.
pub(crate) trait EmModel {
    type Params: Clone;

    /// Parameters maximizing (or not decreasing) the expected complete-data
    /// log-likelihood given `z`. `prev` is the current parameter value.
    fn m_step(&self, z: &DMatrix<f64>, prev: Option<&Self::Params>) -> Result<Self::Params>;

    /// Posterior responsibilities and observed-data log-likelihood.
    fn e_step(&self, params: &Self::Params) -> Result<(DMatrix<f64>, f64)>;
}

#[derive(Debug, Clone)]
pub(crate) struct EmRun<P> {
    pub params: P,
    pub z: DMatrix<f64>,
    pub loglik: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
}

pub(crate) fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / (1.0 + cur.abs())
}

/// Runs up to `budget` M/E iterations starting from responsibilities `z`.
pub(crate) fn iterate<M: EmModel>(
    model: &M,
    mut z: DMatrix<f64>,
    mut prev: Option<M::Params>,
    mut trace: Vec<f64>,
    budget: usize,
    rel_tol: f64,
) -> Result<EmRun<M::Params>> {
    let mut converged = false;
    for _ in 0..budget.max(1) {
        let params = model.m_step(&z, prev.as_ref())?;
        let (next_z, ll) = model.e_step(&params)?;
        if !ll.is_finite() {
            return Err(Error::Degenerate { g: next_z.ncols() });
        }
        z = next_z;
        prev = Some(params);
        if let Some(&last) = trace.last() {
            if relative_change(last, ll) < rel_tol {
                converged = true;
            }
        }
        trace.push(ll);
        if converged {
            break;
        }
    }
    let loglik = *trace.last().expect("at least one iteration");
    Ok(EmRun { params: prev.expect("at least one iteration"), z, loglik, trace, converged })
}

/// Continues a run until convergence or until the total iteration count
/// reaches `max_iter`.
pub(crate) fn resume<M: EmModel>(model: &M, run: EmRun<M::Params>, max_iter: usize, rel_tol: f64) -> Result<EmRun<M::Params>> {
    if run.converged || run.trace.len() >= max_iter {
        return Ok(run);
    }
    let budget = max_iter - run.trace.len();
    iterate(model, run.z, Some(run.params), run.trace, budget, rel_tol)
}

/// Failures that justify trying another start rather than aborting.
pub(crate) fn is_degenerate(err: &Error) -> bool {
    matches!(err, Error::Degenerate { .. } | Error::NotPositiveDefinite)
}

/// k-means starts, a short EM run from each, then the best run continued to
/// convergence. If the continued run collapses, the next best start is tried.
pub(crate) fn multistart<M: EmModel>(model: &M, x: &DMatrix<f64>, g: usize, config: &EmConfig) -> Result<EmRun<M::Params>> {
    let wanted = if g == 1 { 1 } else { config.n_starts };
    let max_attempts = if g == 1 { 1 } else { 3 * config.n_starts };
    let short_budget = config.init_iter.clamp(1, config.max_iter);

    let mut runs = Vec::with_capacity(wanted);
    let mut attempt = 0u64;
    while runs.len() < wanted && (attempt as usize) < max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, attempt));
        attempt += 1;
        let labels = kmeans_labels(x, g, &mut rng);
        match iterate(model, one_hot(&labels, g), None, Vec::new(), short_budget, config.rel_tol) {
            Ok(run) => runs.push(run),
            Err(e) if is_degenerate(&e) => continue,
            Err(e) => return Err(e),
        }
    }
    runs.sort_by(|a, b| b.loglik.total_cmp(&a.loglik));
    for run in runs {
        match resume(model, run, config.max_iter, config.rel_tol) {
            Ok(done) => return Ok(done),
            Err(e) if is_degenerate(&e) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Degenerate { g })
}
