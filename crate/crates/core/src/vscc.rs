//! Variable selection by within-group variance under a moving correlation
//! threshold, for Gaussian and Manly mixtures.
//!
//! Variables are ranked by their within-group variance `W_j` on scaled data.
//! For each exponent `i = 1..=5` a subset is grown in that order: the first
//! variable always enters and variable `j` joins when `|rho_jr| < 1 - W_j^i`
//! for every `r` already in the subset. A mixture is fitted to every subset
//! and the one with the smallest clustering uncertainty
//! `n - sum_i max_g z_ig` is kept.
//!
//! In the Manly variant each observation is mapped through every
//! component's transformation; the `(i, g)` term of `W_j` uses the `g`-th
//! image of observation `i`, and correlations are taken on the
//! responsibility-weighted blend of those images.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{is_standardized, standardize, validate_labels, DataMatrix};
use crate::em::{hard_labels, EmConfig, Responsibilities};
use crate::error::{Error, Result};
use crate::gmm::{select_g, GaussianMixtureFit};
use crate::linalg::correlation_matrix;
use crate::manly::{
    em_fit_manly, manly_transform, select_g_manly, LambdaMask, LambdaMatrix, LambdaSelection, ManlyMixtureFit,
};

/// Number of correlation-threshold exponents tried.
pub const EXPONENTS: usize = 5;

/// Either kind of fitted mixture.
#[derive(Debug, Clone)]
pub enum MixtureFit {
    Gaussian(GaussianMixtureFit),
    Manly(ManlyMixtureFit),
}

impl MixtureFit {
    pub fn g(&self) -> usize {
        match self {
            Self::Gaussian(f) => f.g,
            Self::Manly(f) => f.g,
        }
    }

    pub fn loglik(&self) -> f64 {
        match self {
            Self::Gaussian(f) => f.loglik,
            Self::Manly(f) => f.loglik,
        }
    }

    pub fn bic(&self) -> f64 {
        match self {
            Self::Gaussian(f) => f.bic,
            Self::Manly(f) => f.bic,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::Gaussian(f) => f.n_params,
            Self::Manly(f) => f.n_params,
        }
    }

    pub fn responsibilities(&self) -> &Responsibilities {
        match self {
            Self::Gaussian(f) => &f.responsibilities,
            Self::Manly(f) => &f.responsibilities,
        }
    }

    pub fn hard_labels(&self) -> Vec<usize> {
        hard_labels(self.responsibilities())
    }

    pub fn lambdas(&self) -> Option<&LambdaMatrix> {
        match self {
            Self::Gaussian(_) => None,
            Self::Manly(f) => Some(&f.lambdas),
        }
    }

    /// BIC after every accepted stepwise move (Manly forward/backward only).
    pub fn bic_path(&self) -> &[f64] {
        match self {
            Self::Gaussian(_) => &[],
            Self::Manly(f) => &f.bic_path,
        }
    }
}

/// The selection algorithm variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SelectionMethod {
    #[serde(rename = "vscc")]
    Gaussian,
    #[serde(rename = "vscc-manly-full")]
    ManlyFull,
    #[serde(rename = "vscc-manly-forward")]
    ManlyForward,
    #[serde(rename = "vscc-manly-backward")]
    ManlyBackward,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 4] = [Self::Gaussian, Self::ManlyFull, Self::ManlyForward, Self::ManlyBackward];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gaussian => "vscc",
            Self::ManlyFull => "vscc-manly-full",
            Self::ManlyForward => "vscc-manly-forward",
            Self::ManlyBackward => "vscc-manly-backward",
        }
    }

    pub fn lambda_selection(self) -> Option<LambdaSelection> {
        match self {
            Self::Gaussian => None,
            Self::ManlyFull => Some(LambdaSelection::Full),
            Self::ManlyForward => Some(LambdaSelection::Forward),
            Self::ManlyBackward => Some(LambdaSelection::Backward),
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// Five candidate variable subsets and the quantities that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetFamily {
    /// Column indices (0-based) in insertion order, one subset per exponent.
    pub subsets: Vec<Vec<usize>>,
    /// Within-group variance of every variable.
    pub w: Vec<f64>,
    /// Columns in ascending `w`, ties by column index.
    pub sort_order: Vec<usize>,
    pub correlations: DMatrix<f64>,
}

impl SubsetFamily {
    /// Replays every insertion and checks the threshold rule and that the
    /// minimal-`w` variable heads every subset.
    pub fn certify(&self) -> Result<()> {
        if self.subsets.len() != EXPONENTS {
            return Err(Error::InvalidData(format!("{} subsets, expected {EXPONENTS}", self.subsets.len())));
        }
        let first = self.sort_order[0];
        let min_w = self.w.iter().copied().fold(f64::INFINITY, f64::min);
        if self.w[first] != min_w {
            return Err(Error::InvalidData("sort order does not start at the minimal variance".into()));
        }
        for (e, subset) in self.subsets.iter().enumerate() {
            let power = (e + 1) as i32;
            if subset.first() != Some(&first) {
                return Err(Error::InvalidData(format!("subset {} does not start with variable {first}", e + 1)));
            }
            let position: BTreeMap<usize, usize> = self.sort_order.iter().enumerate().map(|(k, &j)| (j, k)).collect();
            for (k, &j) in subset.iter().enumerate().skip(1) {
                if position[&subset[k - 1]] >= position[&j] {
                    return Err(Error::InvalidData(format!("subset {} is not in ascending-w order", e + 1)));
                }
                let threshold = 1.0 - self.w[j].powi(power);
                for &r in &subset[..k] {
                    let rho = self.correlations[(j, r)].abs();
                    if !(rho < threshold) {
                        return Err(Error::InvalidData(format!(
                            "subset {}: |rho({j},{r})| = {rho} is not below {threshold}",
                            e + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether `V_(1) ⊆ V_(2) ⊆ ... ⊆ V_(5)`.
    pub fn is_nested(&self) -> bool {
        self.subsets.windows(2).all(|pair| {
            let next: BTreeSet<_> = pair[1].iter().collect();
            pair[0].iter().all(|j| next.contains(j))
        })
    }
}

/// `n - sum_i max_g z_ig`.
pub fn uncertainty(z: &Responsibilities) -> f64 {
    let m = z.matrix();
    m.nrows() as f64 - m.row_iter().map(|r| r.max()).sum::<f64>()
}

/// `W_j = (1/n) sum_g sum_i z_ig (y_ij - mu_gj)^2` for a single data matrix.
pub fn within_group_variance(y: &DataMatrix, z: &Responsibilities, means: &DMatrix<f64>) -> Result<Vec<f64>> {
    within_group_variance_by_component(std::slice::from_ref(y.values()), z, means)
}

/// As [`within_group_variance`], but component `g` reads its own matrix
/// `ys[g]`. A single matrix is shared by every component.
pub fn within_group_variance_by_component(ys: &[DMatrix<f64>], z: &Responsibilities, means: &DMatrix<f64>) -> Result<Vec<f64>> {
    let g = z.g();
    let Some(first) = ys.first() else {
        return Err(Error::DimensionMismatch("no data matrices".into()));
    };
    let (n, p) = first.shape();
    if ys.len() != 1 && ys.len() != g {
        return Err(Error::DimensionMismatch(format!("{} matrices for {g} components", ys.len())));
    }
    if ys.iter().any(|y| y.shape() != (n, p)) || z.n() != n || means.shape() != (g, p) {
        return Err(Error::DimensionMismatch(format!(
            "data {n}x{p}, responsibilities {}x{g}, means {}x{}",
            z.n(),
            means.nrows(),
            means.ncols()
        )));
    }
    let zm = z.matrix();
    let mut w = vec![0.0; p];
    for k in 0..g {
        let y = if ys.len() == 1 { &ys[0] } else { &ys[k] };
        for j in 0..p {
            let col = y.column(j);
            let mu = means[(k, j)];
            let mut acc = 0.0;
            for i in 0..n {
                let d = col[i] - mu;
                acc += zm[(i, k)] * d * d;
            }
            w[j] += acc;
        }
    }
    Ok(w.into_iter().map(|v| v / n as f64).collect())
}

/// Builds the five subsets from `w` and the Pearson correlations of `y`.
pub fn build_subsets(y: &DataMatrix, w: &[f64]) -> Result<SubsetFamily> {
    if w.len() != y.p() {
        return Err(Error::DimensionMismatch(format!("{} variances for {} variables", w.len(), y.p())));
    }
    build_subsets_from_correlations(correlation_matrix(y.values()), w)
}

pub fn build_subsets_from_correlations(correlations: DMatrix<f64>, w: &[f64]) -> Result<SubsetFamily> {
    let p = w.len();
    if correlations.shape() != (p, p) {
        return Err(Error::DimensionMismatch("correlation matrix does not match variances".into()));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidData("within-group variances must be finite and non-negative".into()));
    }
    let mut sort_order: Vec<usize> = (0..p).collect();
    sort_order.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));

    let subsets = (1..=EXPONENTS as i32)
        .map(|power| {
            let mut chosen = vec![sort_order[0]];
            for &j in &sort_order[1..] {
                let threshold = 1.0 - w[j].powi(power);
                if chosen.iter().all(|&r| correlations[(j, r)].abs() < threshold) {
                    chosen.push(j);
                }
            }
            chosen
        })
        .collect();
    let family = SubsetFamily { subsets, w: w.to_vec(), sort_order, correlations };
    if !family.is_nested() {
        log::info!("candidate subsets are not nested: {:?}", family.subsets);
    }
    Ok(family)
}

/// Steps shared by every variant once memberships (and, for Manly mixtures,
/// transformation parameters) are known: transform, scale, compute `W`, and
/// grow the subsets.
pub fn subset_family(x: &DataMatrix, z: &Responsibilities, lambdas: Option<&LambdaMatrix>) -> Result<SubsetFamily> {
    let (n, p) = (x.n(), x.p());
    let g = z.g();
    if z.n() != n {
        return Err(Error::DimensionMismatch(format!("{} responsibility rows for {n} observations", z.n())));
    }
    let mut images: Vec<DMatrix<f64>> = match lambdas {
        None => vec![x.values().clone()],
        Some(l) => {
            if l.mask().g() != g || l.mask().p() != p {
                return Err(Error::DimensionMismatch("transformation parameters do not match data".into()));
            }
            (0..g)
                .map(|k| {
                    let row = l.row(k);
                    let mut y = x.values().clone();
                    for (j, mut col) in y.column_iter_mut().enumerate() {
                        for v in col.iter_mut() {
                            *v = manly_transform(*v, row[j])?;
                        }
                    }
                    Ok(y)
                })
                .collect::<Result<_>>()?
        }
    };

    let zm = z.matrix();
    let blended = if images.len() == 1 {
        images[0].clone()
    } else {
        DMatrix::from_fn(n, p, |i, j| (0..g).map(|k| zm[(i, k)] * images[k][(i, j)]).sum())
    };
    let mut centre = vec![0.0; p];
    let mut scale = vec![0.0; p];
    for j in 0..p {
        let col = blended.column(j);
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0);
        if !(var > 0.0) {
            return Err(Error::ZeroVariance(x.column_names()[j].clone()));
        }
        centre[j] = m;
        scale[j] = var.sqrt();
    }
    let rescale = |m: &mut DMatrix<f64>| {
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - centre[j]) / scale[j]);
        }
    };
    for img in images.iter_mut() {
        rescale(img);
    }
    let mut blended = blended;
    rescale(&mut blended);

    let sizes = z.sizes();
    let means = DMatrix::from_fn(g, p, |k, j| {
        let y = if images.len() == 1 { &images[0] } else { &images[k] };
        let s: f64 = (0..n).map(|i| zm[(i, k)] * y[(i, j)]).sum();
        if sizes[k] > 0.0 {
            s / sizes[k]
        } else {
            0.0
        }
    });
    let w = within_group_variance_by_component(&images, z, &means)?;
    build_subsets_from_correlations(correlation_matrix(&blended), &w)
}

/// Outcome of one variable-selection run.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    /// Mixture fitted to all variables.
    pub initial_fit: MixtureFit,
    pub family: SubsetFamily,
    /// One fit per subset; `None` when that fit failed.
    pub fits: Vec<Option<MixtureFit>>,
    pub uncertainties: Vec<Option<f64>>,
    /// 0-based position of the chosen subset (exponent `chosen_index + 1`).
    pub chosen_index: usize,
    /// Chosen columns in original column order.
    pub chosen_columns: Vec<usize>,
    pub chosen_subset: Vec<String>,
    pub final_fit: MixtureFit,
}

impl SelectionResult {
    pub fn uncertainty(&self) -> f64 {
        self.uncertainties[self.chosen_index].expect("chosen subset has a fit")
    }
}

fn sorted(subset: &[usize]) -> Vec<usize> {
    let mut s = subset.to_vec();
    s.sort_unstable();
    s
}

/// Fits every distinct subset once, then picks the least uncertain one
/// (smaller subset, then smaller exponent, on ties).
fn finish_selection(
    x: &DataMatrix,
    method: SelectionMethod,
    initial_fit: MixtureFit,
    family: SubsetFamily,
    fit: impl Fn(&DataMatrix) -> Result<MixtureFit> + Sync,
) -> Result<SelectionResult> {
    let distinct: Vec<Vec<usize>> = family.subsets.iter().map(|s| sorted(s)).collect::<BTreeSet<_>>().into_iter().collect();
    let fitted: BTreeMap<Vec<usize>, Option<MixtureFit>> = distinct
        .par_iter()
        .map(|cols| {
            let res = x.select_columns(cols).and_then(|sub| fit(&sub));
            if let Err(e) = &res {
                log::warn!("fit on columns {cols:?} failed: {e}");
            }
            (cols.clone(), res.ok())
        })
        .collect();

    let fits: Vec<Option<MixtureFit>> = family.subsets.iter().map(|s| fitted[&sorted(s)].clone()).collect();
    let uncertainties: Vec<Option<f64>> =
        fits.iter().map(|f| f.as_ref().map(|f| uncertainty(f.responsibilities()))).collect();

    let mut chosen: Option<usize> = None;
    for (i, u) in uncertainties.iter().enumerate() {
        let Some(u) = *u else { continue };
        let better = match chosen {
            None => true,
            Some(c) => {
                let uc = uncertainties[c].expect("chosen has a fit");
                u < uc || (u == uc && family.subsets[i].len() < family.subsets[c].len())
            }
        };
        if better {
            chosen = Some(i);
        }
    }
    let chosen_index = chosen.ok_or_else(|| Error::InvalidData("no candidate subset could be fitted".into()))?;
    let chosen_columns = sorted(&family.subsets[chosen_index]);
    let chosen_subset = chosen_columns.iter().map(|&j| x.column_names()[j].clone()).collect();
    let final_fit = fits[chosen_index].clone().expect("chosen subset has a fit");
    Ok(SelectionResult {
        method,
        initial_fit,
        family,
        fits,
        uncertainties,
        chosen_index,
        chosen_columns,
        chosen_subset,
        final_fit,
    })
}

/// Variable selection with Gaussian mixtures. Data are standardized first
/// unless they already are.
pub fn vscc_gaussian(x: &DataMatrix, g_range: &[usize], config: &EmConfig) -> Result<SelectionResult> {
    let scaled;
    let x = if is_standardized(x, 1e-8) {
        x
    } else {
        scaled = standardize(x)?.0;
        &scaled
    };
    let initial = select_g(x, g_range, config)?;
    let family = subset_family(x, &initial.responsibilities, None)?;
    finish_selection(x, SelectionMethod::Gaussian, MixtureFit::Gaussian(initial), family, |sub| {
        select_g(sub, g_range, config).map(MixtureFit::Gaussian)
    })
}

/// Variable selection with Manly mixtures; `selection` picks full,
/// forward or backward transformation-parameter selection, used for both
/// the initial fit and the per-subset fits.
pub fn vscc_manly(
    x: &DataMatrix,
    g_range: &[usize],
    selection: LambdaSelection,
    config: &EmConfig,
) -> Result<SelectionResult> {
    let method = match selection {
        LambdaSelection::Full => SelectionMethod::ManlyFull,
        LambdaSelection::Forward => SelectionMethod::ManlyForward,
        LambdaSelection::Backward => SelectionMethod::ManlyBackward,
    };
    let initial = select_g_manly(x, g_range, selection, config)?;
    let family = subset_family(x, &initial.responsibilities, Some(&initial.lambdas))?;
    finish_selection(x, method, MixtureFit::Manly(initial), family, |sub| {
        select_g_manly(sub, g_range, selection, config).map(MixtureFit::Manly)
    })
}

/// Dispatches on `method`.
pub fn run_selection(x: &DataMatrix, g_range: &[usize], method: SelectionMethod, config: &EmConfig) -> Result<SelectionResult> {
    match method.lambda_selection() {
        None => vscc_gaussian(x, g_range, config),
        Some(sel) => vscc_manly(x, g_range, sel, config),
    }
}

/// Which mixture family supplies transformations in classification mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifyMode {
    Gaussian,
    Manly,
}

/// Subset construction with known class labels `1..=K`. In Manly mode each
/// class gets transformation parameters maximizing its own likelihood.
pub fn vscc_classify(x: &DataMatrix, labels: &[usize], mode: ClassifyMode, config: &EmConfig) -> Result<SubsetFamily> {
    let k = validate_labels(labels, x.n()).map_err(|e| Error::Precondition(e.to_string()))?;
    let p = x.p();
    for class in 1..=k {
        let size = labels.iter().filter(|&&l| l == class).count();
        if size < p + 1 {
            return Err(Error::Precondition(format!("class {class} has {size} members, needs at least {}", p + 1)));
        }
    }
    let z = Responsibilities::from_labels(labels, k)?;
    let lambdas = match mode {
        ClassifyMode::Gaussian => None,
        ClassifyMode::Manly => {
            let mut values = Vec::with_capacity(k * p);
            for class in 1..=k {
                let rows: Vec<usize> = (0..x.n()).filter(|&i| labels[i] == class).collect();
                let sub = DataMatrix::new(x.values().select_rows(&rows), x.column_names().to_vec())?;
                let fit = em_fit_manly(&sub, 1, &LambdaMask::all(1, p, true), config)?;
                values.extend_from_slice(fit.lambdas.row(0));
            }
            Some(LambdaMatrix::new(values, LambdaMask::all(k, p, true))?)
        }
    };
    subset_family(x, &z, lambdas.as_ref())
}
