//! Run reports and the CSV files written next to them.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use skewselect_core::{DataMatrix, SelectionMethod, SelectionResult};

/// One candidate subset from the selection run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetRow {
    /// Exponent that produced the subset (1..=5).
    pub i: usize,
    pub subset: Vec<String>,
    pub g: Option<usize>,
    pub uncertainty: Option<f64>,
    pub bic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
}

/// Machine-readable result of `skewselect --input`.
///
/// Everything except `timing` is a function of the input and flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: SelectionMethod,
    pub seed: u64,
    pub standardized: bool,
    pub g_range: [usize; 2],
    pub n: usize,
    pub variables: Vec<String>,
    pub chosen_variables: Vec<String>,
    pub chosen_i: usize,
    pub g: usize,
    pub uncertainty: f64,
    pub bic: f64,
    pub loglik: f64,
    /// Transformation parameters of the final fit, one row per component.
    pub lambdas: Option<Vec<Vec<f64>>>,
    pub ari: Option<f64>,
    pub subsets: Vec<SubsetRow>,
    pub timing: Timing,
}

impl RunReport {
    pub fn new(
        x: &DataMatrix,
        sel: &SelectionResult,
        seed: u64,
        standardized: bool,
        g_range: [usize; 2],
        ari: Option<f64>,
        seconds: f64,
    ) -> Self {
        let names = x.column_names();
        let subsets = sel
            .family
            .subsets
            .iter()
            .zip(&sel.fits)
            .zip(&sel.uncertainties)
            .enumerate()
            .map(|(k, ((cols, fit), u))| SubsetRow {
                i: k + 1,
                subset: cols.iter().map(|&j| names[j].clone()).collect(),
                g: fit.as_ref().map(|f| f.g()),
                uncertainty: *u,
                bic: fit.as_ref().map(|f| f.bic()),
            })
            .collect();
        let fit = &sel.final_fit;
        Self {
            method: sel.method,
            seed,
            standardized,
            g_range,
            n: x.n(),
            variables: names.to_vec(),
            chosen_variables: sel.chosen_subset.clone(),
            chosen_i: sel.chosen_index + 1,
            g: fit.g(),
            uncertainty: sel.uncertainty(),
            bic: fit.bic(),
            loglik: fit.loglik(),
            lambdas: fit.lambdas().map(|l| l.rows()),
            ari,
            subsets,
            timing: Timing { wall_clock_seconds: seconds },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text summary for the terminal.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method      {}", self.method);
        let _ = writeln!(out, "variables   {}", self.chosen_variables.join(", "));
        let _ = writeln!(out, "G           {}", self.g);
        let _ = writeln!(out, "uncertainty {:.4}", self.uncertainty);
        let _ = writeln!(out, "BIC         {:.3}", self.bic);
        if let Some(ari) = self.ari {
            let _ = writeln!(out, "ARI         {ari:.4}");
        }
        let _ = writeln!(out, "\n  i  G  uncertainty          BIC  subset");
        for row in &self.subsets {
            let mark = if row.i == self.chosen_i { '*' } else { ' ' };
            let num = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"));
            let _ = writeln!(
                out,
                "{mark} {}  {}  {:>11}  {:>11}  {}",
                row.i,
                row.g.map_or_else(|| "-".to_string(), |g| g.to_string()),
                num(row.uncertainty, 4),
                num(row.bic, 2),
                row.subset.join(", ")
            );
        }
        let _ = writeln!(out, "\ntime        {:.2}s", self.timing.wall_clock_seconds);
        out
    }
}

/// Selected columns with the hard cluster labels appended.
pub fn write_selected(x: &DataMatrix, columns: &[usize], clusters: &[usize], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut header: Vec<&str> = columns.iter().map(|&j| x.column_names()[j].as_str()).collect();
    header.push("cluster");
    w.write_record(&header)?;
    for (i, cluster) in clusters.iter().enumerate() {
        let mut rec: Vec<String> = columns.iter().map(|&j| x.values()[(i, j)].to_string()).collect();
        rec.push(cluster.to_string());
        w.write_record(&rec)?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Long-format `observation,variable,value[,label]` rows for pairs plots.
/// An empty `labels` slice drops the label column.
pub fn emit_pairs_data(x: &DataMatrix, labels: &[usize], path: &Path) -> Result<()> {
    if !labels.is_empty() && labels.len() != x.n() {
        anyhow::bail!("{} labels for {} observations", labels.len(), x.n());
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let with_labels = !labels.is_empty();
    let mut header = vec!["observation", "variable", "value"];
    if with_labels {
        header.push("label");
    }
    w.write_record(&header)?;
    for i in 0..x.n() {
        for (j, name) in x.column_names().iter().enumerate() {
            let mut rec = vec![(i + 1).to_string(), name.clone(), x.values()[(i, j)].to_string()];
            if with_labels {
                rec.push(labels[i].to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
