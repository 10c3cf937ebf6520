//! Data containers, loss families and CSV ingestion.
//!
//! A [`Dataset`] is immutable once built: the design matrix is stored
//! column-major because every boosting iteration scans whole columns.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("duplicate column `{0}` in header")]
    DuplicateColumn(String),
    #[error("row {row}, column `{column}`: cannot parse {value:?} as a finite number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: response not in {{0,1}} (found {value}) for binomial family")]
    ResponseNotBinary { row: usize, value: f64 },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { row: usize, column: String },
    #[error("dataset needs at least 2 observations and 1 covariate (n={n}, p={p})")]
    TooSmall { n: usize, p: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("length mismatch: y has {y} entries, eta has {eta}")]
    LengthMismatch { y: usize, eta: usize },
    #[error("unknown family `{0}` (expected gaussian or binomial)")]
    UnknownFamily(String),
}

/// Loss family of the boosting model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Squared-error loss `(y - eta)^2 / 2`.
    Gaussian,
    /// Negative Bernoulli log-likelihood with logit link, `y` coded 0/1.
    Binomial,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Gaussian => f.write_str("gaussian"),
            Family::Binomial => f.write_str("binomial"),
        }
    }
}

impl FromStr for Family {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "binomial" => Ok(Family::Binomial),
            other => Err(DataError::UnknownFamily(other.to_string())),
        }
    }
}

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Matrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    /// Builds a matrix from a column-major buffer.
    pub fn from_col_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if data.len() != nrows * ncols {
            return Err(DataError::Shape(format!(
                "{} values for a {nrows}x{ncols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { nrows, ncols, data })
    }

    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let ncols = columns.len();
        let nrows = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for (j, col) in columns.into_iter().enumerate() {
            if col.len() != nrows {
                return Err(DataError::Shape(format!(
                    "column {j} has {} rows, expected {nrows}",
                    col.len()
                )));
            }
            data.extend(col);
        }
        Ok(Matrix { nrows, ncols, data })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.nrows + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.nrows + row] = value;
    }

    #[inline]
    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.nrows..(col + 1) * self.nrows]
    }

    #[inline]
    pub fn column_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.nrows..(col + 1) * self.nrows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.nrows.max(1)).take(self.ncols)
    }

    /// Copies the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for col in self.columns() {
            data.extend(rows.iter().map(|&i| col[i]));
        }
        Matrix {
            nrows: rows.len(),
            ncols: self.ncols,
            data,
        }
    }
}

/// Design matrix, response and loss family.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Matrix,
    y: Vec<f64>,
    col_names: Vec<String>,
    response: String,
    family: Family,
}

impl Dataset {
    /// Validates and assembles a dataset. The response column is named `y`.
    pub fn new(
        x: Matrix,
        y: Vec<f64>,
        col_names: Vec<String>,
        family: Family,
    ) -> Result<Self, DataError> {
        Self::with_response_name(x, y, col_names, "y", family)
    }

    pub fn with_response_name(
        x: Matrix,
        y: Vec<f64>,
        col_names: Vec<String>,
        response: &str,
        family: Family,
    ) -> Result<Self, DataError> {
        let (n, p) = (x.nrows(), x.ncols());
        if n < 2 || p < 1 {
            return Err(DataError::TooSmall { n, p });
        }
        if y.len() != n {
            return Err(DataError::Shape(format!(
                "{} responses for {n} rows",
                y.len()
            )));
        }
        if col_names.len() != p {
            return Err(DataError::Shape(format!(
                "{} column names for {p} columns",
                col_names.len()
            )));
        }
        let mut seen = HashSet::with_capacity(p + 1);
        for name in col_names
            .iter()
            .chain(std::iter::once(&response.to_string()))
        {
            if !seen.insert(name.clone()) {
                return Err(DataError::DuplicateColumn(name.clone()));
            }
        }
        for (j, col) in x.columns().enumerate() {
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    row,
                    column: col_names[j].clone(),
                });
            }
        }
        for (row, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    row,
                    column: response.to_string(),
                });
            }
            if family == Family::Binomial && v != 0.0 && v != 1.0 {
                return Err(DataError::ResponseNotBinary { row, value: v });
            }
        }
        Ok(Dataset {
            x,
            y,
            col_names,
            response: response.to_string(),
            family,
        })
    }

    /// Default covariate names `x1..xp`.
    pub fn default_names(p: usize) -> Vec<String> {
        (1..=p).map(|j| format!("x{j}")).collect()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn response_name(&self) -> &str {
        &self.response
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Row subset; invariants carry over from the parent dataset.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            col_names: self.col_names.clone(),
            response: self.response.clone(),
            family: self.family,
        }
    }

    /// Writes the dataset as CSV: covariates in order, response last.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| DataError::Csv(e.to_string());
        w.write_record(
            self.col_names
                .iter()
                .map(String::as_str)
                .chain([self.response.as_str()]),
        )
        .map_err(csv_err)?;
        let mut record = Vec::with_capacity(self.p() + 1);
        for i in 0..self.n() {
            record.clear();
            record.extend((0..self.p()).map(|j| self.x.get(i, j).to_string()));
            record.push(self.y[i].to_string());
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| DataError::Csv(e.to_string()))
    }
}

/// Reads a CSV file with a mandatory header row.
pub fn load_csv(
    path: impl AsRef<Path>,
    response: &str,
    family: Family,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, response, family)
}

/// Parses CSV from any reader. Row indices in errors are 1-based data rows.
pub fn read_csv<R: Read>(reader: R, response: &str, family: Family) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(DataError::DuplicateColumn(h.clone()));
        }
    }
    let resp_idx = header
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| DataError::MissingColumn(response.to_string()))?;

    let width = header.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); width];
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        if record.len() != width {
            return Err(DataError::RaggedRow {
                row,
                column: header[record.len().min(width - 1)].clone(),
                expected: width,
                found: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let value = cell
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    row,
                    column: header[j].clone(),
                    value: cell.to_string(),
                })?;
            columns[j].push(value);
        }
    }

    let y = columns.remove(resp_idx);
    let mut names = header;
    names.remove(resp_idx);
    let n = y.len();
    if let Some(row) = (family == Family::Binomial)
        .then(|| y.iter().position(|&v| v != 0.0 && v != 1.0))
        .flatten()
    {
        return Err(DataError::ResponseNotBinary {
            row: row + 1,
            value: y[row],
        });
    }
    if n < 2 || names.is_empty() {
        return Err(DataError::TooSmall { n, p: names.len() });
    }
    let x = Matrix::from_columns(columns)?;
    Dataset::with_response_name(x, y, names, response, family)
}

/// Logistic response function, evaluated without overflow.
#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Pointwise loss `rho(y, eta)`.
#[inline]
pub fn loss(family: Family, y: f64, eta: f64) -> f64 {
    match family {
        Family::Gaussian => 0.5 * (y - eta) * (y - eta),
        // -[y log h + (1-y) log(1-h)] = log(1 + e^eta) - y eta
        Family::Binomial => softplus(eta) - y * eta,
    }
}

/// Pointwise negative gradient `-d rho / d eta`.
#[inline]
pub fn negative_gradient_at(family: Family, y: f64, eta: f64) -> f64 {
    match family {
        Family::Gaussian => y - eta,
        Family::Binomial => y - logistic(eta),
    }
}

/// Pseudo-residuals at the current fit.
pub fn negative_gradient(family: Family, y: &[f64], eta: &[f64]) -> Result<Vec<f64>, DataError> {
    if y.len() != eta.len() {
        return Err(DataError::LengthMismatch {
            y: y.len(),
            eta: eta.len(),
        });
    }
    Ok(y.iter()
        .zip(eta)
        .map(|(&yi, &ei)| negative_gradient_at(family, yi, ei))
        .collect())
}

/// Mean loss over observations.
pub fn empirical_risk(family: Family, y: &[f64], eta: &[f64]) -> f64 {
    let total: f64 = y
        .iter()
        .zip(eta)
        .map(|(&yi, &ei)| loss(family, yi, ei))
        .sum();
    total / y.len() as f64
}
