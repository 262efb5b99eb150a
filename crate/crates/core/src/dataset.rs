//! Dataset ingestion (LIBSVM sparse text, CSV), feature/label scaling and
//! train/test splitting.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Dense feature matrix (one row per instance) plus the per-instance labels.
///
/// Labels are ground truth: inside an experiment they are handed to the
/// [`Oracle`](crate::bagging::Oracle) and never to the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePool {
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
    pub feature_names: Option<Vec<String>>,
}

impl InstancePool {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if features.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("pool contains NaN or infinite values"));
        }
        Ok(Self {
            features,
            labels,
            feature_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Copies the rows listed in `indices` into a new matrix.
    pub fn rows(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(indices.len(), self.dim(), |r, c| {
            self.features[(indices[r], c)]
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Libsvm,
    Csv,
}

/// Which column of a CSV table holds the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl Default for LabelColumn {
    fn default() -> Self {
        LabelColumn::Name("y".to_owned())
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_finite(token: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(line, format!("non-numeric {what} `{token}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite {what} `{token}`")));
    }
    Ok(v)
}

/// Parses LIBSVM text (`label idx:val idx:val ...`, 1-based strictly
/// increasing indices). Blank lines are skipped; `#` comments are rejected.
pub fn parse_libsvm(text: &str, expected_dim: Option<usize>) -> Result<InstancePool> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut dim = expected_dim.unwrap_or(0);

    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if !line.is_ascii() {
            return Err(parse_err(line_no, "non-ASCII input"));
        }
        if line.contains('#') {
            return Err(parse_err(line_no, "comments are not supported"));
        }
        let mut tokens = line.split_ascii_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        labels.push(parse_finite(label_tok, line_no, "label")?);

        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("expected idx:val, got `{tok}`")))?;
            let idx: i64 = idx
                .parse()
                .map_err(|_| parse_err(line_no, format!("non-numeric index `{idx}`")))?;
            if idx < 1 {
                return Err(parse_err(line_no, format!("index must be >= 1, got {idx}")));
            }
            let idx = idx as usize;
            if idx <= last {
                return Err(parse_err(
                    line_no,
                    format!("indices must be strictly increasing ({idx} after {last})"),
                ));
            }
            last = idx;
            row.push((idx - 1, parse_finite(val, line_no, "value")?));
        }
        dim = dim.max(last);
        rows.push(row);
    }

    let mut features = DMatrix::zeros(rows.len(), dim);
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            features[(r, c)] = v;
        }
    }
    InstancePool::new(features, DVector::from_vec(labels))
}

/// Serializes a pool to LIBSVM text; zero entries are omitted.
pub fn write_libsvm(pool: &InstancePool) -> String {
    let mut out = String::new();
    for r in 0..pool.len() {
        write!(out, "{}", pool.labels[r]).unwrap();
        for c in 0..pool.dim() {
            let v = pool.features[(r, c)];
            if v != 0.0 {
                write!(out, " {}:{}", c + 1, v).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Parses a rectangular CSV table with a header row.
pub fn parse_csv(text: &str, label: &LabelColumn) -> Result<InstancePool> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let width = header.len();
    let label_idx = match label {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Name(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("label column `{name}` not found")))?,
        LabelColumn::Index(i) => {
            return Err(parse_err(1, format!("label column {i} out of range ({width} columns)")))
        }
    };

    let mut labels = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("ragged row: expected {width} fields, got {}", record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let v = parse_finite(cell.trim(), line, "cell")?;
            if c == label_idx {
                labels.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let n = labels.len();
    let features = DMatrix::from_row_slice(n, width - 1, &values);
    let mut pool = InstancePool::new(features, DVector::from_vec(labels))?;
    pool.feature_names = Some(
        header
            .into_iter()
            .enumerate()
            .filter(|(c, _)| *c != label_idx)
            .map(|(_, h)| h)
            .collect(),
    );
    Ok(pool)
}

/// Reads and parses a dataset file.
pub fn load_pool(path: &Path, format: DataFormat, label: &LabelColumn) -> Result<InstancePool> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Libsvm => parse_libsvm(&text, None),
        DataFormat::Csv => parse_csv(&text, label),
    }
}

/// How a column is mapped to a common scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// `(x - mean) / std`, population std.
    #[default]
    Zscore,
    /// Affine map of `[min, max]` onto `[-1, 1]`.
    Minmax,
}

/// Per-column affine scaling `x' = (x - mean) / std`.
///
/// For [`Scaling::Minmax`] `mean` holds the range midpoint and `std` the
/// half-range, so one apply path serves both schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub label_mean: f64,
    pub label_std: f64,
}

impl StandardizationStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            label_mean: 0.0,
            label_std: 1.0,
        }
    }
}

fn column_stats(values: impl Iterator<Item = f64> + Clone, scheme: Scaling) -> (f64, f64) {
    let (lo, hi) = values
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    match scheme {
        Scaling::Zscore => {
            let n = values.clone().count() as f64;
            let mean = values.clone().sum::<f64>() / n;
            if lo == hi {
                return (mean, 1.0);
            }
            let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 0.0 { sd } else { 1.0 })
        }
        Scaling::Minmax => {
            if lo == hi {
                (lo, 1.0)
            } else {
                (0.5 * (lo + hi), 0.5 * (hi - lo))
            }
        }
    }
}

/// Fits scaling statistics on the rows `on_indices`.
pub fn fit_scaler(
    pool: &InstancePool,
    on_indices: &[usize],
    features: Scaling,
    labels: Scaling,
) -> Result<StandardizationStats> {
    if on_indices.is_empty() {
        return Err(Error::invalid("cannot fit scaling statistics on zero rows"));
    }
    if let Some(&bad) = on_indices.iter().find(|&&i| i >= pool.len()) {
        return Err(Error::invalid(format!("row index {bad} out of range")));
    }
    let (mean, std) = (0..pool.dim())
        .map(|c| column_stats(on_indices.iter().map(|&r| pool.features[(r, c)]), features))
        .unzip();
    let (label_mean, label_std) =
        column_stats(on_indices.iter().map(|&r| pool.labels[r]), labels);
    Ok(StandardizationStats {
        mean,
        std,
        label_mean,
        label_std,
    })
}

/// Z-score statistics for features and labels.
pub fn fit_standardizer(pool: &InstancePool, on_indices: &[usize]) -> Result<StandardizationStats> {
    fit_scaler(pool, on_indices, Scaling::Zscore, Scaling::Zscore)
}

pub fn apply_standardizer(
    pool: &InstancePool,
    stats: &StandardizationStats,
) -> Result<InstancePool> {
    if stats.mean.len() != pool.dim() || stats.std.len() != pool.dim() {
        return Err(Error::Dimension {
            expected: pool.dim(),
            got: stats.mean.len(),
        });
    }
    let features = DMatrix::from_fn(pool.len(), pool.dim(), |r, c| {
        (pool.features[(r, c)] - stats.mean[c]) / stats.std[c]
    });
    let labels = pool.labels.map(|y| (y - stats.label_mean) / stats.label_std);
    Ok(InstancePool {
        features,
        labels,
        feature_names: pool.feature_names.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Shuffles `0..n` under `seed` and cuts off `floor(train_fraction * n)`
/// training indices.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("cannot split an empty pool"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_train = (train_fraction * n as f64).floor() as usize;
    let test_indices = order.split_off(n_train);
    Ok(Split {
        train_indices: order,
        test_indices,
    })
}

pub fn split_pool(pool: &InstancePool, train_fraction: f64, seed: u64) -> Result<Split> {
    split_indices(pool.len(), train_fraction, seed)
}
