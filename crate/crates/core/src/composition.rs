//! Compositional predictor matrices: validation, truncation, simulation and
//! CSV input/output.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::SimRng;

/// Row sums must match 1 within this absolute tolerance.
pub const CLOSURE_TOL: f64 = 1e-10;

/// `n x p` matrix whose rows lie in the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionMatrix {
    values: Array2<f64>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

fn default_labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

impl CompositionMatrix {
    /// Wrap an already closed matrix with generated labels (`s1..`, `t1..`).
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, p) = values.dim();
        Self::with_labels(values, default_labels("s", n), default_labels("t", p))
    }

    pub fn with_labels(values: Array2<f64>, row_labels: Vec<String>, col_labels: Vec<String>) -> Result<Self> {
        let (n, p) = values.dim();
        if row_labels.len() != n || col_labels.len() != p {
            return Err(Error::Schema(format!(
                "label counts ({}, {}) do not match matrix shape ({n}, {p})",
                row_labels.len(),
                col_labels.len()
            )));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::DegenerateSample {
                    row: i,
                    label: row_labels[i].clone(),
                    reason: format!("entry {v} outside [0, 1]"),
                });
            }
            let s = row.sum();
            if (s - 1.0).abs() > CLOSURE_TOL {
                return Err(Error::DegenerateSample {
                    row: i,
                    label: row_labels[i].clone(),
                    reason: format!("row sums to {s}, not 1"),
                });
            }
        }
        Ok(CompositionMatrix { values, row_labels, col_labels })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_taxa(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    /// Fraction of exactly-zero entries.
    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.values.iter().filter(|&&v| v == 0.0).count();
        zeros as f64 / self.values.len().max(1) as f64
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> CompositionMatrix {
        let values = self.values.select(ndarray::Axis(0), rows);
        let row_labels = rows.iter().map(|&i| self.row_labels[i].clone()).collect();
        CompositionMatrix { values, row_labels, col_labels: self.col_labels.clone() }
    }

    /// Reorder columns; `order[k]` is the current index of new column `k`.
    pub fn permute_columns(&self, order: &[usize]) -> CompositionMatrix {
        let values = self.values.select(ndarray::Axis(1), order);
        let col_labels = order.iter().map(|&j| self.col_labels[j].clone()).collect();
        CompositionMatrix { values, row_labels: self.row_labels.clone(), col_labels }
    }
}

/// Non-compositional covariates; may have zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    values: Array2<f64>,
    col_labels: Vec<String>,
}

impl CovariateMatrix {
    pub fn new(values: Array2<f64>, col_labels: Vec<String>) -> Result<Self> {
        if col_labels.len() != values.ncols() {
            return Err(Error::Schema("covariate label count does not match columns".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("covariates must be finite"));
        }
        Ok(CovariateMatrix { values, col_labels })
    }

    pub fn empty(n: usize) -> Self {
        CovariateMatrix { values: Array2::zeros((n, 0)), col_labels: Vec::new() }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.values.ncols()
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn select_rows(&self, rows: &[usize]) -> CovariateMatrix {
        CovariateMatrix {
            values: self.values.select(ndarray::Axis(0), rows),
            col_labels: self.col_labels.clone(),
        }
    }
}

/// Accept a nonnegative matrix as compositions, closing rows that do not
/// already sum to 1 within `tol`. The flag reports whether any row was
/// rescaled.
pub fn validate_closure(
    m: Array2<f64>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    tol: f64,
) -> Result<(CompositionMatrix, bool)> {
    let mut m = m;
    let mut renormalized = false;
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        let label = row_labels.get(i).cloned().unwrap_or_default();
        if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::DegenerateSample { row: i, label, reason: format!("invalid entry {v}") });
        }
        let s = row.sum();
        if s <= 0.0 {
            return Err(Error::DegenerateSample { row: i, label, reason: "row sums to zero".into() });
        }
        if (s - 1.0).abs() > tol {
            renormalized = true;
        }
        // always divide so accepted rows sum to 1 up to rounding
        row.mapv_inplace(|v| v / s);
    }
    Ok((CompositionMatrix::with_labels(m, row_labels, col_labels)?, renormalized))
}

/// Zero entries below `cut` and re-close rows. Returns the new matrix and its
/// zero fraction.
pub fn truncate_renormalize(x: &CompositionMatrix, cut: f64) -> Result<(CompositionMatrix, f64)> {
    if !(0.0..1.0).contains(&cut) {
        return Err(Error::arg(format!("truncation cut {cut} must lie in [0, 1)")));
    }
    if cut == 0.0 {
        let z = x.zero_fraction();
        return Ok((x.clone(), z));
    }
    let mut v = x.values.clone();
    for (i, mut row) in v.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|a| if a < cut { 0.0 } else { a });
        let s = row.sum();
        if s <= 0.0 {
            return Err(Error::DegenerateSample {
                row: i,
                label: x.row_labels[i].clone(),
                reason: format!("every entry is below the cut {cut}"),
            });
        }
        row.mapv_inplace(|a| a / s);
    }
    let out = CompositionMatrix { values: v, row_labels: x.row_labels.clone(), col_labels: x.col_labels.clone() };
    let z = out.zero_fraction();
    Ok((out, z))
}

/// Covariance of the latent Gaussian in logistic-normal sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovSpec {
    Identity,
    /// `rho^|i - j|`.
    ExpDecay { rho: f64 },
}

impl CovSpec {
    fn matrix(&self, d: usize) -> Array2<f64> {
        match *self {
            CovSpec::Identity => Array2::eye(d),
            CovSpec::ExpDecay { rho } => {
                Array2::from_shape_fn((d, d), |(i, j)| rho.powi((i as i32 - j as i32).abs()))
            }
        }
    }
}

/// Draw `n` compositions `x = (e^z_1, .., e^z_{p-1}, 1) / (1 + sum e^z)`
/// with `z ~ N(mean, cov)`.
pub fn sample_logistic_normal(
    n: usize,
    p: usize,
    mean: &[f64],
    cov: CovSpec,
    rng: &mut SimRng,
) -> Result<CompositionMatrix> {
    if p < 2 {
        return Err(Error::arg("need at least two taxa"));
    }
    let d = p - 1;
    if mean.len() != d {
        return Err(Error::arg(format!("mean has length {}, expected {d}", mean.len())));
    }
    let chol = match cov {
        CovSpec::Identity => None,
        other => Some(
            linalg::cholesky(other.matrix(d).view())
                .map_err(|_| Error::arg("latent covariance is not positive definite"))?,
        ),
    };
    let mut values = Array2::zeros((n, p));
    let mut e = Array1::zeros(d);
    for i in 0..n {
        for k in 0..d {
            e[k] = rng.normal();
        }
        let z: Array1<f64> = match &chol {
            Some(l) => l.dot(&e),
            None => e.clone(),
        };
        // shift by the max exponent so large latent values cannot overflow
        let zmax = (0..d).map(|k| z[k] + mean[k]).fold(0.0f64, f64::max);
        let mut denom = (-zmax).exp();
        for k in 0..d {
            let w = (z[k] + mean[k] - zmax).exp();
            values[[i, k]] = w;
            denom += w;
        }
        values[[i, d]] = (-zmax).exp();
        for k in 0..p {
            values[[i, k]] /= denom;
        }
    }
    CompositionMatrix::new(values)
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Add iid Gaussian noise with variance `var(signal) / snr`.
pub fn add_noise_snr(signal: &[f64], snr: f64, rng: &mut SimRng) -> Result<(Vec<f64>, f64)> {
    if !(snr > 0.0) {
        return Err(Error::arg("snr must be positive"));
    }
    let var = sample_variance(signal);
    if !(var > 0.0) {
        return Err(Error::arg("signal is constant, snr is undefined"));
    }
    let sigma = (var / snr).sqrt();
    let y = signal.iter().map(|s| s + sigma * rng.normal()).collect();
    Ok((y, sigma))
}

/// Labelled numeric table read from CSV: first row headers, first column
/// sample IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Array2<f64>,
}

impl Table {
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Table> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 {
            return Err(Error::Schema(format!("{}: need an ID column and at least one value column", path.display())));
        }
        let col_labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut row_labels = Vec::new();
        let mut data = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != headers.len() {
                return Err(Error::Schema(format!("{}: row {} has {} fields", path.display(), r + 1, rec.len())));
            }
            row_labels.push(rec[0].to_string());
            for (c, field) in rec.iter().skip(1).enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Schema(format!(
                        "{}: row '{}' column '{}' is not numeric ('{field}')",
                        path.display(),
                        &rec[0],
                        col_labels[c]
                    ))
                })?;
                data.push(v);
            }
        }
        let values = Array2::from_shape_vec((row_labels.len(), col_labels.len()), data)
            .map_err(|e| Error::Schema(e.to_string()))?;
        Ok(Table { row_labels, col_labels, values })
    }

    /// Write with a leading ID column headed `id_header`. Floats use Rust's
    /// shortest round-trip formatting.
    pub fn write_csv(&self, path: impl AsRef<Path>, id_header: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![id_header.to_string()];
        header.extend(self.col_labels.iter().cloned());
        w.write_record(&header)?;
        for (i, label) in self.row_labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.values.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl From<&CompositionMatrix> for Table {
    fn from(x: &CompositionMatrix) -> Table {
        Table { row_labels: x.row_labels.clone(), col_labels: x.col_labels.clone(), values: x.values.clone() }
    }
}
