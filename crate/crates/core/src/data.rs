//! Numeric data matrices, CSV ingestion and column standardization.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// An `n x p` matrix of finite observations with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    column_names: Vec<String>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        let (n, p) = values.shape();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 observations, got {n}")));
        }
        if p < 1 {
            return Err(Error::InvalidData("need at least one variable".into()));
        }
        if column_names.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {p} columns",
                column_names.len()
            )));
        }
        let mut seen = HashSet::with_capacity(p);
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateColumn(name.clone()));
            }
        }
        for j in 0..p {
            for i in 0..n {
                if !values[(i, j)].is_finite() {
                    return Err(Error::InvalidData(format!(
                        "non-finite value at observation {}, column {:?}",
                        i + 1,
                        column_names[j]
                    )));
                }
            }
        }
        Ok(Self { values, column_names })
    }

    /// Builds a matrix with generated names `V1..Vp`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let names = default_names(values.ncols());
        Self::new(values, names)
    }

    pub fn from_rows(rows: &[Vec<f64>], column_names: Vec<String>) -> Result<Self> {
        let p = column_names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::DimensionMismatch(format!(
                "row {} has {} values, expected {p}",
                bad + 1,
                rows[bad].len()
            )));
        }
        let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(values, column_names)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    /// Keeps the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Precondition("cannot select an empty column set".into()));
        }
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.p()) {
            return Err(Error::DimensionMismatch(format!(
                "column index {bad} out of range for {} columns",
                self.p()
            )));
        }
        let values = self.values.select_columns(columns);
        let names = columns.iter().map(|&j| self.column_names[j].clone()).collect();
        Self::new(values, names)
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

pub(crate) fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("V{j}")).collect()
}

/// Whether the sample standard deviation uses `n - 1` or `n` as divisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SdConvention {
    Sample,
    Population,
}

/// Column means and standard deviations removed by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub convention: SdConvention,
}

impl StandardizationParams {
    /// Maps standardized values back to the original scale.
    pub fn inverse(&self, standardized: &DataMatrix) -> Result<DataMatrix> {
        if standardized.p() != self.means.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns, parameters for {}",
                standardized.p(),
                self.means.len()
            )));
        }
        let mut values = standardized.values.clone();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            col.apply(|v| *v = *v * self.sds[j] + self.means[j]);
        }
        DataMatrix::new(values, standardized.column_names.clone())
    }
}

/// Centres every column and scales it to unit sample standard deviation.
pub fn standardize(x: &DataMatrix) -> Result<(DataMatrix, StandardizationParams)> {
    let n = x.n() as f64;
    let mut values = x.values.clone();
    let mut means = Vec::with_capacity(x.p());
    let mut sds = Vec::with_capacity(x.p());
    for (j, mut col) in values.column_iter_mut().enumerate() {
        let mean = col.sum() / n;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1.0)).sqrt();
        if !(sd > 0.0) || sd < f64::EPSILON * mean.abs().max(1.0) {
            return Err(Error::ZeroVariance(x.column_names[j].clone()));
        }
        col.apply(|v| *v = (*v - mean) / sd);
        means.push(mean);
        sds.push(sd);
    }
    let params = StandardizationParams { means, sds, convention: SdConvention::Sample };
    Ok((DataMatrix::new(values, x.column_names.clone())?, params))
}

/// True when every column already has mean 0 and sample sd 1 to within `tol`.
pub fn is_standardized(x: &DataMatrix, tol: f64) -> bool {
    let n = x.n() as f64;
    x.values.column_iter().all(|col| {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        mean.abs() < tol && (var.sqrt() - 1.0).abs() < tol
    })
}

/// A data matrix with optional class labels `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub data: DataMatrix,
    pub labels: Option<Vec<usize>>,
    /// Original label values, indexed by `label - 1`.
    pub label_levels: Vec<String>,
}

impl LabeledDataset {
    pub fn new(data: DataMatrix, labels: Option<Vec<usize>>) -> Result<Self> {
        let mut levels = Vec::new();
        if let Some(labels) = &labels {
            validate_labels(labels, data.n())?;
            let k = labels.iter().copied().max().unwrap_or(0);
            levels = (1..=k).map(|c| c.to_string()).collect();
        }
        Ok(Self { data, labels, label_levels: levels })
    }
}

/// Checks that labels have length `n` and cover every class `1..=K`.
pub fn validate_labels(labels: &[usize], n: usize) -> Result<usize> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} observations",
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l == 0) {
        return Err(Error::InvalidData("labels must start at 1".into()));
    }
    let k = labels.iter().copied().max().unwrap_or(0);
    let mut present = vec![false; k];
    for &l in labels {
        present[l - 1] = true;
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::InvalidData(format!("class {} has no members", missing + 1)));
    }
    Ok(k)
}

/// Encodes arbitrary values as `1..=K` in order of first appearance.
pub fn encode_labels<S: AsRef<str>>(raw: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut codes: HashMap<&str, usize> = HashMap::new();
    let mut levels = Vec::new();
    let labels = raw
        .iter()
        .map(|v| {
            let v = v.as_ref();
            *codes.entry(v).or_insert_with(|| {
                levels.push(v.to_string());
                levels.len()
            })
        })
        .collect();
    (labels, levels)
}

/// Reads a CSV file with a header row. See [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_csv(file, label_column)
}

/// Parses CSV text. Every cell outside `label_column` must be numeric.
///
/// Rows in error messages are file line numbers, so the header is row 1 and
/// the first observation is row 2.
pub fn read_csv<R: Read>(reader: R, label_column: Option<&str>) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();

    let mut seen = HashSet::new();
    for name in &header {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateColumn(name.clone()));
        }
    }
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingLabelColumn(name.to_string()))?,
        ),
        None => None,
    };
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r + 2;
        let mut row = Vec::with_capacity(names.len());
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: line,
                column: header[j].clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonNumeric { row: line, column: header[j].clone(), value: cell.to_string() });
            }
            row.push(value);
        }
        rows.push(row);
    }

    let data = DataMatrix::from_rows(&rows, names)?;
    match label_idx {
        Some(_) => {
            let (labels, levels) = encode_labels(&raw_labels);
            Ok(LabeledDataset { data, labels: Some(labels), label_levels: levels })
        }
        None => Ok(LabeledDataset { data, labels: None, label_levels: Vec::new() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn parse(text: &str, label: Option<&str>) -> Result<LabeledDataset> {
        read_csv(text.as_bytes(), label)
    }

    #[test]
    fn parses_plain_numeric_file() {
        let ds = parse("a,b\n1,2\n3,4\n5,6\n", None).unwrap();
        assert_eq!(ds.data.n(), 3);
        assert_eq!(ds.data.p(), 2);
        assert_eq!(ds.data.column_names(), ["a", "b"]);
        assert_eq!(ds.data.values()[(2, 1)], 6.0);
        assert!(ds.labels.is_none());
    }

    #[test]
    fn extracts_label_column_by_first_appearance() {
        let ds = parse("a,b\n1,2\n3,4\n5,6\n", Some("b")).unwrap();
        assert_eq!(ds.data.p(), 1);
        assert_eq!(ds.data.column_names(), ["a"]);
        assert_eq!(ds.labels, Some(vec![1, 2, 3]));
        assert_eq!(ds.label_levels, ["2", "4", "6"]);

        let ds = parse("x,sex\n1,f\n2,m\n3,f\n", Some("sex")).unwrap();
        assert_eq!(ds.labels, Some(vec![1, 2, 1]));
    }

    #[test]
    fn reports_non_numeric_cell_location() {
        let err = parse("a,b\nabc,2\n3,4\n", None).unwrap_err();
        match err {
            Error::NonNumeric { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rejects_missing_values_and_bad_headers() {
        assert!(matches!(parse("a,b\n1,\n3,4\n", None), Err(Error::NonNumeric { .. })));
        assert!(matches!(parse("a,a\n1,2\n3,4\n", None), Err(Error::DuplicateColumn(_))));
        assert!(matches!(parse("a,b\n1,2\n3,4\n", Some("c")), Err(Error::MissingLabelColumn(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv("/nonexistent/definitely/not/here.csv", None).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn standardize_fixed_point_and_two_point() {
        let x = DataMatrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, 10.0], vec![1.0, 5.0]], vec!["a".into(), "b".into()])
            .unwrap();
        let (s, params) = standardize(&x).unwrap();
        assert_abs_diff_eq!(s.values()[(0, 0)], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.values()[(2, 0)], 1.0, epsilon = 1e-12);
        assert_eq!(params.convention, SdConvention::Sample);

        let two = DataMatrix::from_rows(&[vec![0.0], vec![10.0]], vec!["c".into()]).unwrap();
        let (s, params) = standardize(&two).unwrap();
        assert_abs_diff_eq!(params.sds[0], 50f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.values()[(0, 0)], -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(s.values()[(1, 0)], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let x = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 2.0], vec![3.0, 2.0]], vec!["a".into(), "k".into()])
            .unwrap();
        match standardize(&x) {
            Err(Error::ZeroVariance(name)) => assert_eq!(name, "k"),
            other => panic!("expected zero variance error, got {other:?}"),
        }
    }

    #[test]
    fn data_matrix_invariants() {
        assert!(DataMatrix::from_rows(&[vec![1.0]], vec!["a".into()]).is_err());
        assert!(DataMatrix::from_rows(&[vec![1.0], vec![f64::NAN]], vec!["a".into()]).is_err());
        assert!(LabeledDataset::new(
            DataMatrix::from_rows(&[vec![1.0], vec![2.0]], vec!["a".into()]).unwrap(),
            Some(vec![1, 3])
        )
        .is_err());
    }
}
