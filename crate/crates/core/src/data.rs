//! In-memory datasets and CSV ingestion.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::LossSpec;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}, column '{column}': cannot parse '{cell}' as a finite number")]
    BadCell {
        line: u64,
        column: String,
        cell: String,
    },

    #[error("response column '{0}' not found")]
    MissingResponse(String),

    #[error("data has no rows")]
    Empty,

    #[error("data has no covariate columns")]
    NoCovariates,

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in covariate {column}, row {row}")]
    NonFinite { row: usize, column: usize },

    #[error("{kind:?} response cannot be used with the {loss} loss")]
    IncompatibleResponse { kind: ResponseKind, loss: String },
}

/// Value set of the response column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Continuous,
    /// values in {0, 1}
    Binary01,
    /// values in {-1, +1}
    BinaryPm1,
    /// nonnegative integers
    Count,
}

impl ResponseKind {
    /// Most specific kind consistent with the observed values.
    pub fn infer(y: &[f64]) -> Self {
        if y.iter().all(|&v| v == 0.0 || v == 1.0) {
            ResponseKind::Binary01
        } else if y.iter().all(|&v| v == -1.0 || v == 1.0) {
            ResponseKind::BinaryPm1
        } else if y.iter().all(|&v| v >= 0.0 && v.fract() == 0.0) {
            ResponseKind::Count
        } else {
            ResponseKind::Continuous
        }
    }
}

/// `n x p` covariates (stored column-major) and a length-`n` response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<f64>,
    n: usize,
    p: usize,
    y: Vec<f64>,
    column_names: Option<Vec<String>>,
    response_kind: ResponseKind,
}

impl Dataset {
    /// Builds a dataset from covariate columns. The response kind is inferred.
    pub fn from_columns(columns: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, DataError> {
        let n = y.len();
        let p = columns.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if p == 0 {
            return Err(DataError::NoCovariates);
        }
        let mut flat = Vec::with_capacity(n * p);
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(DataError::Shape(format!(
                    "covariate {j} has {} rows, response has {n}",
                    col.len()
                )));
            }
            flat.extend_from_slice(col);
        }
        Self::from_column_major(flat, n, p, y)
    }

    pub fn from_column_major(
        columns: Vec<f64>,
        n: usize,
        p: usize,
        y: Vec<f64>,
    ) -> Result<Self, DataError> {
        if n == 0 || y.len() != n {
            return Err(DataError::Shape(format!(
                "response has {} rows, expected {n}",
                y.len()
            )));
        }
        if p == 0 {
            return Err(DataError::NoCovariates);
        }
        if columns.len() != n * p {
            return Err(DataError::Shape(format!(
                "{} covariate values for a {n} x {p} matrix",
                columns.len()
            )));
        }
        if let Some(pos) = columns.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: pos % n,
                column: pos / n,
            });
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Shape(format!(
                "non-finite response at row {row}"
            )));
        }
        let response_kind = ResponseKind::infer(&y);
        Ok(Self {
            columns,
            n,
            p,
            y,
            column_names: None,
            response_kind,
        })
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != self.p {
            return Err(DataError::Shape(format!(
                "{} column names for {} covariates",
                names.len(),
                self.p
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.n..(j + 1) * self.n]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn response_kind(&self) -> ResponseKind {
        self.response_kind
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Name of covariate `j`, falling back to `X{j+1}`.
    pub fn column_name(&self, j: usize) -> String {
        match &self.column_names {
            Some(names) => names[j].clone(),
            None => format!("X{}", j + 1),
        }
    }

    /// Copy with the rows of the given covariates reordered by `perm`
    /// (row `i` of the copy is row `perm[i]` of the original). Other
    /// covariates and the response are untouched.
    pub fn permute_rows(&self, perm: &[usize], which: impl Fn(usize) -> bool) -> Dataset {
        assert_eq!(perm.len(), self.n);
        let mut columns = self.columns.clone();
        for j in 0..self.p {
            if !which(j) {
                continue;
            }
            let src = self.column(j);
            let dst = &mut columns[j * self.n..(j + 1) * self.n];
            for (d, &pi) in dst.iter_mut().zip(perm) {
                *d = src[pi];
            }
        }
        Dataset {
            columns,
            ..self.clone()
        }
    }

    /// Copy keeping only the covariates in `keep`, in that order.
    pub fn select_columns(&self, keep: &[usize]) -> Dataset {
        let mut columns = Vec::with_capacity(keep.len() * self.n);
        for &j in keep {
            columns.extend_from_slice(self.column(j));
        }
        Dataset {
            columns,
            p: keep.len(),
            column_names: self
                .column_names
                .as_ref()
                .map(|names| keep.iter().map(|&j| names[j].clone()).collect()),
            ..self.clone()
        }
    }

    /// Recodes a binary response to the coding `loss` expects and checks the
    /// response is in the loss's domain.
    pub fn prepare_for(&self, loss: &LossSpec) -> Result<Dataset, DataError> {
        let incompatible = || DataError::IncompatibleResponse {
            kind: self.response_kind,
            loss: loss.name().to_string(),
        };
        let mut out = self.clone();
        match (loss, self.response_kind) {
            (LossSpec::Logistic, ResponseKind::Binary01) => {}
            (LossSpec::Logistic, ResponseKind::BinaryPm1) => {
                out.y
                    .iter_mut()
                    .for_each(|v| *v = if *v > 0.0 { 1.0 } else { 0.0 });
                out.response_kind = ResponseKind::Binary01;
            }
            (LossSpec::ExponentialClassification, ResponseKind::BinaryPm1) => {}
            (LossSpec::ExponentialClassification, ResponseKind::Binary01) => {
                out.y
                    .iter_mut()
                    .for_each(|v| *v = if *v > 0.0 { 1.0 } else { -1.0 });
                out.response_kind = ResponseKind::BinaryPm1;
            }
            (LossSpec::Logistic | LossSpec::ExponentialClassification, _) => {
                return Err(incompatible())
            }
            (LossSpec::Poisson, ResponseKind::Count | ResponseKind::Binary01) => {}
            (LossSpec::Poisson, _) => return Err(incompatible()),
            (LossSpec::Gaussian | LossSpec::Quantile { .. }, _) => {}
        }
        loss.validate_response(&out.y).map_err(|_| incompatible())?;
        Ok(out)
    }
}

/// Reads a rectangular numeric CSV. `response` names the response column
/// when `has_header` is set; otherwise it must be a 1-based column number.
pub fn load_csv(
    path: impl AsRef<Path>,
    response: &str,
    has_header: bool,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, response, has_header)
}

pub fn read_csv(
    reader: impl std::io::Read,
    response: &str,
    has_header: bool,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let to_parse = |e: csv::Error| DataError::Parse {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };

    let header: Option<Vec<String>> = if has_header {
        Some(
            rdr.headers()
                .map_err(to_parse)?
                .iter()
                .map(str::to_string)
                .collect(),
        )
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    let mut names = header.clone();
    for record in rdr.records() {
        let record = record.map_err(to_parse)?;
        let line = record.position().map_or(0, |p| p.line());
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(DataError::Parse {
                line,
                message: format!("expected {w} fields, found {}", record.len()),
            });
        }
        let names = names.get_or_insert_with(|| (1..=w).map(|k| k.to_string()).collect());
        let mut row = Vec::with_capacity(w);
        for (k, cell) in record.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(DataError::BadCell {
                        line,
                        column: names[k].clone(),
                        cell: cell.to_string(),
                    })
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let names = names.expect("names are set once a row is read");
    let resp_idx = if has_header {
        names.iter().position(|h| h == response)
    } else {
        response
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 1 && k <= names.len())
            .map(|k| k - 1)
    }
    .ok_or_else(|| DataError::MissingResponse(response.to_string()))?;

    let n = rows.len();
    let p = names.len() - 1;
    let mut columns = Vec::with_capacity(n * p);
    for k in (0..names.len()).filter(|&k| k != resp_idx) {
        columns.extend(rows.iter().map(|r| r[k]));
    }
    let y = rows.iter().map(|r| r[resp_idx]).collect();
    let covariate_names = names
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != resp_idx)
        .map(|(k, name)| {
            if has_header {
                name.clone()
            } else {
                format!("X{}", k + 1)
            }
        })
        .collect();
    Dataset::from_column_major(columns, n, p, y)?.with_column_names(covariate_names)
}
