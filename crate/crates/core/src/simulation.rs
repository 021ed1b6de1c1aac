//! Synthetic skewed-cluster data and the replicated selection study.
//!
//! Clustering variables come from a mixture of multivariate variance-gamma
//! distributions, generated as `X = mu + Y alpha + sqrt(Y) U` with
//! `Y ~ gamma(shape, rate = psi / 2)` and `U ~ N_p(0, Sigma)`. Nonsense
//! variables are independent GIG draws with `chi = 0`, which is the same
//! as `gamma(shape, rate = psi / 2)`. A noisy variable mixes a clustering
//! variable with Gaussian noise.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{default_names, standardize, DataMatrix, LabeledDataset};
use crate::em::{derive_seed, EmConfig};
use crate::error::{Error, Result};
use crate::metrics::ari;
use crate::vscc::{run_selection, SelectionMethod, SelectionResult};

/// One variance-gamma mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceGammaComponent {
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub alpha: Vec<f64>,
    /// Gamma shape of the mixing variable.
    pub shape: f64,
    /// The mixing variable has rate `psi / 2`.
    pub psi: f64,
    pub weight: f64,
}

impl VarianceGammaComponent {
    pub fn validate(&self) -> Result<()> {
        let p = self.mu.len();
        if p == 0 || self.alpha.len() != p || self.sigma.shape() != (p, p) {
            return Err(Error::DimensionMismatch("component mu, alpha and sigma disagree".into()));
        }
        if !(self.shape > 0.0) || !(self.psi > 0.0) {
            return Err(Error::InvalidParameter(format!("shape {} and psi {} must be positive", self.shape, self.psi)));
        }
        if !(self.weight > 0.0 && self.weight < 1.0) && self.weight != 1.0 {
            return Err(Error::InvalidParameter(format!("weight {} outside (0, 1]", self.weight)));
        }
        if Cholesky::new(self.sigma.clone()).is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(())
    }

    /// `E[X] = mu + (2 shape / psi) alpha`.
    pub fn mean(&self) -> Vec<f64> {
        let ey = 2.0 * self.shape / self.psi;
        self.mu.iter().zip(&self.alpha).map(|(m, a)| m + ey * a).collect()
    }
}

/// `GIG(shape, 0, psi)`, i.e. `gamma(shape, rate = psi / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaSpec {
    pub shape: f64,
    pub psi: f64,
}

/// `X = weight * V_source + (1 - weight) * Z`, `Z ~ N(0, noise_sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoisySpec {
    /// 0-based index of the clustering variable that is mixed in.
    pub source: usize,
    pub weight: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub components: Vec<VarianceGammaComponent>,
    pub nonsense: Vec<GammaSpec>,
    pub noisy: Option<NoisySpec>,
    pub n: usize,
    pub seed: u64,
}

impl SimulationSpec {
    /// Three skewed clusters in two variables, two gamma nonsense variables
    /// and one noisy copy of the first variable (`V1..V5`).
    pub fn skewed_benchmark(n: usize, seed: u64) -> Self {
        let comp = |mu: [f64; 2], s: f64, alpha: [f64; 2], shape: f64, psi: f64, weight: f64| VarianceGammaComponent {
            mu: mu.to_vec(),
            sigma: DMatrix::from_diagonal_element(2, 2, s),
            alpha: alpha.to_vec(),
            shape,
            psi,
            weight,
        };
        Self {
            components: vec![
                comp([2.0, 3.0], 1.0, [1.0, 4.0], 4.0, 8.0, 0.4),
                comp([5.0, 3.0], 1.0, [4.0, 4.0], 4.0, 8.0, 0.4),
                comp([5.0, 15.0], 2.0, [0.1, 0.1], 3.0, 6.0, 0.2),
            ],
            nonsense: vec![GammaSpec { shape: 3.0, psi: 6.0 }, GammaSpec { shape: 1.0, psi: 2.0 }],
            noisy: Some(NoisySpec { source: 0, weight: 0.6, noise_sd: 5.0 }),
            n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter("sample size must be at least 2".into()));
        }
        let first = self.components.first().ok_or_else(|| Error::InvalidParameter("no components".into()))?;
        let p = first.mu.len();
        for c in &self.components {
            c.validate()?;
            if c.mu.len() != p {
                return Err(Error::DimensionMismatch("components have different dimensions".into()));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("component weights sum to {total}")));
        }
        for g in &self.nonsense {
            if !(g.shape > 0.0) || !(g.psi > 0.0) {
                return Err(Error::InvalidParameter("nonsense gamma parameters must be positive".into()));
            }
        }
        if let Some(noisy) = &self.noisy {
            if noisy.source >= p || !(noisy.noise_sd > 0.0) {
                return Err(Error::InvalidParameter("noisy variable spec is invalid".into()));
            }
        }
        Ok(())
    }

    pub fn clustering_dims(&self) -> usize {
        self.components.first().map_or(0, |c| c.mu.len())
    }

    pub fn total_dims(&self) -> usize {
        self.clustering_dims() + self.nonsense.len() + usize::from(self.noisy.is_some())
    }
}

/// `n` draws from `gamma(shape, rate)`.
pub fn sample_gamma<R: Rng + ?Sized>(n: usize, shape: f64, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    let dist = gamma(shape, rate)?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

fn gamma(shape: f64, rate: f64) -> Result<Gamma<f64>> {
    if !(shape > 0.0) || !(rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
        return Err(Error::InvalidParameter(format!("gamma needs shape > 0 and rate > 0, got {shape}, {rate}")));
    }
    Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidParameter(e.to_string()))
}

struct VgSampler {
    mixing: Gamma<f64>,
    lower: DMatrix<f64>,
    mu: DVector<f64>,
    alpha: DVector<f64>,
}

impl VgSampler {
    fn new(comp: &VarianceGammaComponent) -> Result<Self> {
        comp.validate()?;
        Ok(Self {
            mixing: gamma(comp.shape, comp.psi / 2.0)?,
            lower: Cholesky::new(comp.sigma.clone()).ok_or(Error::NotPositiveDefinite)?.l(),
            mu: DVector::from_column_slice(&comp.mu),
            alpha: DVector::from_column_slice(&comp.alpha),
        })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let y = self.mixing.sample(rng);
        let e = DVector::from_fn(self.mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mu + &self.alpha * y + (&self.lower * e) * y.sqrt()
    }
}

/// `n` rows of `mu + y alpha + sqrt(y) u`.
pub fn sample_variance_gamma<R: Rng + ?Sized>(n: usize, comp: &VarianceGammaComponent, rng: &mut R) -> Result<DMatrix<f64>> {
    let sampler = VgSampler::new(comp)?;
    let p = comp.mu.len();
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        out.set_row(i, &sampler.draw(rng).transpose());
    }
    Ok(out)
}

/// Draws a labelled data set. Labels are the generating components `1..=G`.
pub fn generate_dataset(spec: &SimulationSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, q) = (spec.n, spec.clustering_dims());
    let samplers = spec.components.iter().map(VgSampler::new).collect::<Result<Vec<_>>>()?;

    let mut cumulative = Vec::with_capacity(spec.components.len());
    let mut acc = 0.0;
    for c in &spec.components {
        acc += c.weight;
        cumulative.push(acc);
    }
    let labels: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1) + 1
        })
        .collect();

    let mut values = DMatrix::zeros(n, spec.total_dims());
    for (i, &l) in labels.iter().enumerate() {
        let row = samplers[l - 1].draw(&mut rng);
        for j in 0..q {
            values[(i, j)] = row[j];
        }
    }
    for (k, g) in spec.nonsense.iter().enumerate() {
        let draws = sample_gamma(n, g.shape, g.psi / 2.0, &mut rng)?;
        for (i, v) in draws.into_iter().enumerate() {
            values[(i, q + k)] = v;
        }
    }
    if let Some(noisy) = &spec.noisy {
        let col = q + spec.nonsense.len();
        for i in 0..n {
            let z: f64 = rng.sample::<f64, _>(StandardNormal) * noisy.noise_sd;
            values[(i, col)] = noisy.weight * values[(i, noisy.source)] + (1.0 - noisy.weight) * z;
        }
    }
    let data = DataMatrix::new(values, default_names(spec.total_dims()))?;
    LabeledDataset::new(data, Some(labels))
}

/// One method applied to one replicate.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub method: SelectionMethod,
    pub seed: u64,
    pub g: Option<usize>,
    pub ari: Option<f64>,
    /// 0-based chosen columns.
    pub selected: Vec<usize>,
    pub error: Option<String>,
}

/// Aggregates for one method at one sample size.
#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub method: SelectionMethod,
    pub n: usize,
    pub replicates: usize,
    pub failures: usize,
    pub mean_g: f64,
    pub modal_g: Option<usize>,
    pub mean_ari: f64,
    pub sd_ari: f64,
    /// How often each variable was selected, in column order.
    pub selection_counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub variables: Vec<String>,
    pub rows: Vec<StudyRow>,
    pub records: Vec<ReplicateRecord>,
}

impl StudySummary {
    pub fn row(&self, method: SelectionMethod) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["method", "n", "replicates", "failures", "mean_g", "modal_g", "mean_ari", "sd_ari"].map(String::from).to_vec();
        header.extend(self.variables.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.method.to_string(),
                r.n.to_string(),
                r.replicates.to_string(),
                r.failures.to_string(),
                format!("{:.4}", r.mean_g),
                r.modal_g.map_or_else(String::new, |g| g.to_string()),
                format!("{:.4}", r.mean_ari),
                format!("{:.4}", r.sd_ari),
            ];
            rec.extend(r.selection_counts.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Per-replicate context handed to a study observer.
pub struct ReplicateOutcome<'a> {
    pub replicate: usize,
    pub method: SelectionMethod,
    pub data: &'a LabeledDataset,
    pub result: &'a Result<SelectionResult>,
}

/// Runs every method once on each of `replicates` fresh data sets.
pub fn run_study(
    spec: &SimulationSpec,
    replicates: usize,
    methods: &[SelectionMethod],
    g_range: &[usize],
    config: &EmConfig,
) -> Result<StudySummary> {
    run_study_observed(spec, replicates, methods, g_range, config, &|_| {})
}

/// As [`run_study`], calling `observer` with every selection result.
pub fn run_study_observed(
    spec: &SimulationSpec,
    replicates: usize,
    methods: &[SelectionMethod],
    g_range: &[usize],
    config: &EmConfig,
    observer: &(dyn Fn(&ReplicateOutcome<'_>) + Sync),
) -> Result<StudySummary> {
    if replicates < 1 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidParameter("no methods requested".into()));
    }
    spec.validate()?;
    config.validate()?;

    let per_replicate: Vec<Vec<ReplicateRecord>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(spec.seed, r as u64);
            let data = generate_dataset(&SimulationSpec { seed, ..spec.clone() });
            methods
                .iter()
                .map(|&method| run_replicate(r, seed, method, data.as_ref(), g_range, config, observer))
                .collect()
        })
        .collect();
    let records: Vec<ReplicateRecord> = per_replicate.into_iter().flatten().collect();

    let p = spec.total_dims();
    let rows = methods.iter().map(|&m| summarize(m, spec.n, p, &records)).collect();
    Ok(StudySummary { variables: default_names(p), rows, records })
}

fn run_replicate(
    replicate: usize,
    seed: u64,
    method: SelectionMethod,
    data: std::result::Result<&LabeledDataset, &Error>,
    g_range: &[usize],
    config: &EmConfig,
    observer: &(dyn Fn(&ReplicateOutcome<'_>) + Sync),
) -> ReplicateRecord {
    let failed = |e: String| ReplicateRecord { replicate, method, seed, g: None, ari: None, selected: Vec::new(), error: Some(e) };
    let data = match data {
        Ok(d) => d,
        Err(e) => return failed(e.to_string()),
    };
    let cfg = EmConfig { seed, ..config.clone() };
    let result = standardize(&data.data).and_then(|(x, _)| run_selection(&x, g_range, method, &cfg));
    observer(&ReplicateOutcome { replicate, method, data, result: &result });
    match result {
        Ok(sel) => {
            let truth = data.labels.as_deref().expect("simulated data are labelled");
            let score = ari(truth, &sel.final_fit.hard_labels()).ok();
            ReplicateRecord {
                replicate,
                method,
                seed,
                g: Some(sel.final_fit.g()),
                ari: score,
                selected: sel.chosen_columns.clone(),
                error: None,
            }
        }
        Err(e) => failed(e.to_string()),
    }
}

fn summarize(method: SelectionMethod, n: usize, p: usize, records: &[ReplicateRecord]) -> StudyRow {
    let mine: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == method).collect();
    let ok: Vec<&&ReplicateRecord> = mine.iter().filter(|r| r.error.is_none()).collect();
    let gs: Vec<usize> = ok.iter().filter_map(|r| r.g).collect();
    let aris: Vec<f64> = ok.iter().filter_map(|r| r.ari).collect();

    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mean_ari = mean(&aris);
    let sd_ari = if aris.len() > 1 {
        (aris.iter().map(|a| (a - mean_ari).powi(2)).sum::<f64>() / (aris.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut g_counts = std::collections::BTreeMap::new();
    for &g in &gs {
        *g_counts.entry(g).or_insert(0usize) += 1;
    }
    // most frequent G, smallest on ties
    let modal_g = g_counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&g, _)| g);
    let mut selection_counts = vec![0; p];
    for r in &ok {
        for &j in &r.selected {
            selection_counts[j] += 1;
        }
    }
    StudyRow {
        method,
        n,
        replicates: mine.len(),
        failures: mine.len() - ok.len(),
        mean_g: mean(&gs.iter().map(|&g| g as f64).collect::<Vec<_>>()),
        modal_g,
        mean_ari,
        sd_ari,
        selection_counts,
    }
}
