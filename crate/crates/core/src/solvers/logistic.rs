use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{solve_iterative, LocalObjective, PenalizedSubproblem, Smooth, SolverError};
use crate::ModelVector;

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inner-loop settings for iterative local solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSolver {
    pub steps: usize,
    /// Initial learning rate. `None` picks `1/(L + aρ)` from the curvature bound.
    pub lr: Option<f64>,
    /// Mini-batch size; `None` uses the whole shard.
    pub minibatch: Option<usize>,
}

impl Default for InnerSolver {
    fn default() -> Self {
        Self {
            steps: 10,
            lr: None,
            minibatch: None,
        }
    }
}

/// Summed cross-entropy of a logistic model on one shard.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    design: DMatrix<f64>,
    /// `designᵀ`, so that each sample is a contiguous column.
    samples_by_column: DMatrix<f64>,
    labels: ModelVector,
    inner: InnerSolver,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    smoothness: f64,
}

impl LogisticObjective {
    /// Labels must be 0 or 1. `seed` drives mini-batch sampling only.
    pub fn new(design: DMatrix<f64>, labels: ModelVector, inner: InnerSolver, seed: u64) -> Result<Self, SolverError> {
        if design.nrows() != labels.len() {
            return Err(SolverError::DimensionMismatch {
                expected: design.nrows(),
                actual: labels.len(),
            });
        }
        if design.nrows() == 0 {
            return Err(SolverError::InvalidSetting("logistic shard needs at least one sample"));
        }
        if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
            return Err(SolverError::InvalidSetting("labels must be 0 or 1"));
        }
        if inner.steps == 0 || inner.minibatch == Some(0) {
            return Err(SolverError::InvalidSetting("steps and mini-batch size must be positive"));
        }
        let smoothness = 0.25 * design.tr_mul(&design).symmetric_eigenvalues().max();
        let order = (0..design.nrows()).collect();
        Ok(Self {
            samples_by_column: design.transpose(),
            design,
            labels,
            inner,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order,
            cursor: usize::MAX,
            smoothness,
        })
    }

    pub fn samples(&self) -> usize {
        self.design.nrows()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn labels(&self) -> &ModelVector {
        &self.labels
    }

    pub fn inner(&self) -> InnerSolver {
        self.inner
    }

    /// Next mini-batch, drawn without replacement within an epoch.
    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.cursor.saturating_add(size) > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        batch
    }

    fn margin(&self, i: usize, theta: &ModelVector) -> f64 {
        self.samples_by_column.column(i).dot(theta)
    }

    fn value_on(&self, rows: impl Iterator<Item = usize>, theta: &ModelVector) -> (f64, usize) {
        let mut total = 0.0;
        let mut count = 0;
        for i in rows {
            let z = self.margin(i, theta);
            total += softplus(z) - self.labels[i] * z;
            count += 1;
        }
        (total, count)
    }

    fn gradient_on(&self, rows: impl Iterator<Item = usize>, theta: &ModelVector) -> (ModelVector, usize) {
        let mut g = ModelVector::zeros(self.design.ncols());
        let mut count = 0;
        for i in rows {
            let weight = sigmoid(self.margin(i, theta)) - self.labels[i];
            g.axpy(weight, &self.samples_by_column.column(i), 1.0);
            count += 1;
        }
        (g, count)
    }

    fn default_lr(&self, sub: &PenalizedSubproblem) -> f64 {
        1.0 / (self.smoothness + sub.anchors.len() as f64 * sub.rho).max(f64::MIN_POSITIVE)
    }
}

impl Smooth for LogisticObjective {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, theta: &ModelVector) -> f64 {
        self.value_on(0..self.samples(), theta).0
    }

    fn gradient(&self, theta: &ModelVector) -> ModelVector {
        self.gradient_on(0..self.samples(), theta).0
    }

    fn curvature_apply(&self, v: &ModelVector) -> ModelVector {
        let xv = &self.design * v;
        0.25 * self.design.tr_mul(&xv)
    }
}

/// Unbiased estimate of the shard loss from a fixed subset of rows.
struct Batch<'a> {
    objective: &'a LogisticObjective,
    rows: &'a [usize],
}

impl Smooth for Batch<'_> {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn value(&self, theta: &ModelVector) -> f64 {
        let (total, count) = self.objective.value_on(self.rows.iter().copied(), theta);
        total * self.objective.samples() as f64 / count as f64
    }

    fn gradient(&self, theta: &ModelVector) -> ModelVector {
        let (g, count) = self.objective.gradient_on(self.rows.iter().copied(), theta);
        g * (self.objective.samples() as f64 / count as f64)
    }

    fn curvature_apply(&self, v: &ModelVector) -> ModelVector {
        self.objective.curvature_apply(v)
    }
}

impl LocalObjective for LogisticObjective {
    fn solve(&mut self, sub: &PenalizedSubproblem, warm: &ModelVector) -> Result<ModelVector, SolverError> {
        let lr = self.inner.lr.unwrap_or_else(|| self.default_lr(sub));
        match self.inner.minibatch {
            Some(size) => {
                let rows = self.next_batch(size);
                let batch = Batch {
                    objective: self,
                    rows: &rows,
                };
                solve_iterative(&batch, sub, warm, self.inner.steps, lr)
            }
            None => solve_iterative(&*self, sub, warm, self.inner.steps, lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_problem(seed: u64, m: usize, d: usize) -> LogisticObjective {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-2.0..2.0));
        let y = ModelVector::from_fn(m, |_, _| f64::from(rng.gen_bool(0.5)));
        LogisticObjective::new(x, y, InnerSolver::default(), seed).unwrap()
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f = random_problem(31, 15, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..10 {
            let theta = ModelVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
            let g = f.gradient(&theta);
            let h = 1e-5;
            for i in 0..4 {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[i] += h;
                down[i] -= h;
                let fd = (f.value(&up) - f.value(&down)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut f = random_problem(33, 10, 2);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| f.next_batch(2)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn two_sample_problem_reaches_reference() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.0]);
        let y = ModelVector::from_column_slice(&[1.0, 0.0]);
        let f = LogisticObjective::new(x, y, InnerSolver::default(), 0).unwrap();
        let sub = PenalizedSubproblem::new(vec![ModelVector::from_column_slice(&[0.2, -0.1])], ModelVector::zeros(2), 0.5);
        let reference = solve_iterative(&f, &sub, &ModelVector::zeros(2), 100_000, 1.0).unwrap();
        let mut short = f.clone();
        short.inner.steps = 200;
        let got = short.solve(&sub, &ModelVector::zeros(2)).unwrap();
        assert!((got - &reference).amax() <= 1e-2);
        let stationarity = sub.total_gradient(&f, &reference);
        assert!(stationarity.norm() < 1e-8);
    }

    #[test]
    fn penalized_objective_never_increases() {
        let mut f = random_problem(34, 40, 3);
        f.inner.lr = Some(50.0);
        let sub = PenalizedSubproblem::new(vec![ModelVector::from_column_slice(&[1.0, 0.0, -1.0])], ModelVector::from_column_slice(&[0.3, 0.0, 0.1]), 2.0);
        let warm = ModelVector::from_column_slice(&[-3.0, 2.0, 0.5]);
        let before = sub.total_value(&f, &warm);
        let after = f.solve(&sub, &warm).unwrap();
        assert!(sub.total_value(&f, &after) <= before);
    }

    #[test]
    fn rejects_bad_labels() {
        let x = DMatrix::zeros(1, 1);
        let y = ModelVector::from_column_slice(&[0.5]);
        assert!(LogisticObjective::new(x, y, InnerSolver::default(), 0).is_err());
    }
}
