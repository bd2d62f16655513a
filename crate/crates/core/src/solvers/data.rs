use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::ModelVector;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset is empty")]
    Empty,
    #[error("cannot split {samples} samples across {workers} workers")]
    TooFewSamples { samples: usize, workers: usize },
    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCount { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {column}: {reason}")]
    BadValue { row: usize, column: usize, reason: String },
    #[error("design has {rows} rows but {targets} targets")]
    Shape { rows: usize, targets: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Samples as rows of `features`, with one target (or 0/1 label) each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub targets: ModelVector,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, targets: ModelVector) -> Result<Self, DataError> {
        if features.nrows() != targets.len() {
            return Err(DataError::Shape {
                rows: features.nrows(),
                targets: targets.len(),
            });
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            targets: self.targets.select_rows(rows),
        }
    }
}

/// Uniform random partition into `n_workers` shards whose sizes differ by at
/// most one. Deterministic in `seed`.
pub fn shard_data(data: &Dataset, n_workers: usize, seed: u64) -> Result<Vec<Dataset>, DataError> {
    if data.is_empty() {
        return Err(DataError::Empty);
    }
    if n_workers == 0 || data.len() < n_workers {
        return Err(DataError::TooFewSamples {
            samples: data.len(),
            workers: n_workers,
        });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = data.len() / n_workers;
    let extra = data.len() % n_workers;
    let mut shards = Vec::with_capacity(n_workers);
    let mut start = 0;
    for w in 0..n_workers {
        let size = base + usize::from(w < extra);
        let mut rows = order[start..start + size].to_vec();
        rows.sort_unstable();
        shards.push(data.select(&rows));
        start += size;
    }
    Ok(shards)
}

/// Headerless CSV: feature columns followed by one target column.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DataError::ColumnCount {
                row,
                expected,
                found: record.len(),
            });
        }
        for (column, field) in record.iter().enumerate() {
            let x: f64 = field.parse().map_err(|e: std::num::ParseFloatError| DataError::BadValue {
                row,
                column,
                reason: e.to_string(),
            })?;
            if !x.is_finite() {
                return Err(DataError::BadValue {
                    row,
                    column,
                    reason: "not finite".into(),
                });
            }
            values.push(x);
        }
        rows += 1;
    }
    let width = width.ok_or(DataError::Empty)?;
    if width < 2 {
        return Err(DataError::ColumnCount {
            row: 0,
            expected: 2,
            found: width,
        });
    }
    let all = DMatrix::from_row_slice(rows, width, &values);
    Ok(Dataset {
        features: all.columns(0, width - 1).into_owned(),
        targets: all.column(width - 1).into_owned(),
    })
}

/// Gaussian linear-regression data with a planted model.
///
/// Feature `j` is scaled by `condition^(−j/(d−1))`, so the pooled Hessian has
/// a condition number of roughly `condition²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticRegression {
    pub samples: usize,
    pub dim: usize,
    pub noise: f64,
    pub condition: f64,
}

impl SyntheticRegression {
    pub fn generate(&self, seed: u64) -> (Dataset, ModelVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let scales: Vec<f64> = (0..d)
            .map(|j| {
                if d > 1 {
                    self.condition.powf(-(j as f64) / (d - 1) as f64)
                } else {
                    1.0
                }
            })
            .collect();
        let planted = ModelVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let features = DMatrix::from_fn(self.samples, d, |_, j| scales[j] * rng.sample::<f64, _>(StandardNormal));
        let noise = ModelVector::from_fn(self.samples, |_, _| self.noise * rng.sample::<f64, _>(StandardNormal));
        let targets = &features * &planted + noise;
        (Dataset { features, targets }, planted)
    }
}

/// Logistic-model classification data with labels drawn from the planted
/// model's probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticClassification {
    pub samples: usize,
    pub dim: usize,
    /// Norm of the planted model; larger values give cleaner labels.
    pub separation: f64,
}

impl SyntheticClassification {
    pub fn generate(&self, seed: u64) -> (Dataset, ModelVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let mut planted = ModelVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = planted.norm();
        if norm > 0.0 {
            planted *= self.separation / norm;
        }
        let features = DMatrix::from_fn(self.samples, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let targets = ModelVector::from_fn(self.samples, |i, _| {
            let z = features.row(i).transpose().dot(&planted);
            let p = 1.0 / (1.0 + (-z).exp());
            f64::from(rng.gen_bool(p))
        });
        (Dataset { features, targets }, planted)
    }
}
