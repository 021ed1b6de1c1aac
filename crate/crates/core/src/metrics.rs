//! Partition agreement: contingency tables and the adjusted Rand index.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Cross-tabulation of two labelings. Rows follow the distinct values of the
/// first labeling in sorted order, columns those of the second.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.col_labels.len()).map(|c| self.counts.iter().map(|r| r[c]).sum()).collect()
    }
}

fn index_of(labels: &[usize]) -> (Vec<usize>, HashMap<usize, usize>) {
    let mut levels: Vec<usize> = labels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let lookup = levels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    (levels, lookup)
}

pub fn contingency(a: &[usize], b: &[usize]) -> Result<ContingencyTable> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("labelings have lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidData("empty labelings".into()));
    }
    let (row_labels, rows) = index_of(a);
    let (col_labels, cols) = index_of(b);
    let mut counts = vec![vec![0u64; col_labels.len()]; row_labels.len()];
    for (x, y) in a.iter().zip(b) {
        counts[rows[x]][cols[y]] += 1;
    }
    Ok(ContingencyTable { counts, row_labels, col_labels, n: a.len() as u64 })
}

fn pairs(k: u64) -> i128 {
    let k = k as i128;
    k * (k - 1) / 2
}

/// Adjusted Rand index of two labelings.
///
/// Computed exactly in integers as
/// `2 (I N - A B) / ((A + B) N - 2 A B)`, with `I` the within-cell pair count,
/// `A`, `B` the within-row and within-column pair counts and `N = C(n, 2)`.
/// When the denominator vanishes (both partitions all-singletons or both a
/// single block) the result is 1 for equal partitions and 0 otherwise.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    let table = contingency(a, b)?;
    if table.n < 2 {
        return Err(Error::InvalidData("ARI needs at least two observations".into()));
    }
    let index: i128 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let rows: i128 = table.row_sums().into_iter().map(pairs).sum();
    let cols: i128 = table.col_sums().into_iter().map(pairs).sum();
    let total = pairs(table.n);

    let num = 2 * (index * total - rows * cols);
    let den = (rows + cols) * total - 2 * rows * cols;
    if den == 0 {
        let same = rows == cols && index == rows;
        return Ok(if same { 1.0 } else { 0.0 });
    }
    Ok(num as f64 / den as f64)
}
