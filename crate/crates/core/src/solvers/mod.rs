//! Local subproblem solvers and centralized reference solutions.

mod data;
mod logistic;
mod oracle;
mod quadratic;

pub use data::{load_csv, shard_data, DataError, Dataset, SyntheticClassification, SyntheticRegression};
pub use logistic::{InnerSolver, LogisticObjective};
pub use oracle::{centralized_oracle, dual_oracle, logistic_reference, CentralizedOptimum, LogisticReference};
pub use quadratic::{solve_quadratic, QuadraticObjective};

use thiserror::Error;

use crate::ModelVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("linear system is singular")]
    Singular,
    #[error("solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    Inaccurate { residual: f64, tolerance: f64 },
    #[error("non-finite gradient after {step} inner steps")]
    NonFiniteGradient { step: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("dual feasibility fails at the last worker: residual {0:e}")]
    InconsistentOptimum(f64),
    #[error("invalid inner-solver setting: {0}")]
    InvalidSetting(&'static str),
}

/// A differentiable objective.
pub trait Smooth {
    fn dim(&self) -> usize;
    fn value(&self, theta: &ModelVector) -> f64;
    fn gradient(&self, theta: &ModelVector) -> ModelVector;
    /// Product of `v` with a fixed matrix that upper-bounds the Hessian
    /// everywhere. Used for step-size selection.
    fn curvature_apply(&self, v: &ModelVector) -> ModelVector;
}

/// An objective a worker can minimize inside an ADMM step.
///
/// `solve` takes `&mut self` so that stochastic objectives can advance their
/// own mini-batch stream.
pub trait LocalObjective: Smooth + Send {
    fn solve(&mut self, sub: &PenalizedSubproblem, warm: &ModelVector) -> Result<ModelVector, SolverError>;
}

/// The linear and quadratic terms an ADMM step adds to a local objective:
/// `⟨g, θ⟩ + (ρ/2) Σ_j ‖θ − z_j‖²`.
///
/// `dual_drift` is `λ_right − λ_left`, with an absent side contributing zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedSubproblem {
    pub anchors: Vec<ModelVector>,
    pub dual_drift: ModelVector,
    pub rho: f64,
}

impl PenalizedSubproblem {
    pub fn new(anchors: Vec<ModelVector>, dual_drift: ModelVector, rho: f64) -> Self {
        Self {
            anchors,
            dual_drift,
            rho,
        }
    }

    pub fn dim(&self) -> usize {
        self.dual_drift.len()
    }

    pub fn penalty_value(&self, theta: &ModelVector) -> f64 {
        let quad: f64 = self.anchors.iter().map(|z| (theta - z).norm_squared()).sum();
        self.dual_drift.dot(theta) + 0.5 * self.rho * quad
    }

    pub fn penalty_gradient(&self, theta: &ModelVector) -> ModelVector {
        let mut g = self.dual_drift.clone();
        for z in &self.anchors {
            g += self.rho * (theta - z);
        }
        g
    }

    pub fn total_value<F: Smooth + ?Sized>(&self, f: &F, theta: &ModelVector) -> f64 {
        f.value(theta) + self.penalty_value(theta)
    }

    pub fn total_gradient<F: Smooth + ?Sized>(&self, f: &F, theta: &ModelVector) -> ModelVector {
        f.gradient(theta) + self.penalty_gradient(theta)
    }
}

/// Gradient descent with backtracking on `f + penalty`, warm-started.
///
/// A trial step that raises the objective halves the learning rate and is
/// retried, so the returned iterate never has a larger penalized objective
/// than `warm`.
pub fn solve_iterative<F: Smooth + ?Sized>(
    f: &F,
    sub: &PenalizedSubproblem,
    warm: &ModelVector,
    steps: usize,
    lr: f64,
) -> Result<ModelVector, SolverError> {
    if steps == 0 {
        return Err(SolverError::InvalidSetting("steps must be at least 1"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(SolverError::InvalidSetting("learning rate must be positive"));
    }
    if warm.len() != sub.dim() {
        return Err(SolverError::DimensionMismatch {
            expected: sub.dim(),
            actual: warm.len(),
        });
    }
    let mut theta = warm.clone();
    let mut value = sub.total_value(f, &theta);
    let mut lr = lr;
    for step in 0..steps {
        let grad = sub.total_gradient(f, &theta);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(SolverError::NonFiniteGradient { step });
        }
        if grad.amax() == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &theta - lr * &grad;
            let trial_value = sub.total_value(f, &trial);
            if trial_value <= value {
                theta = trial;
                value = trial_value;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(theta)
}

/// Largest eigenvalue of the mean curvature bound over `objectives`, by
/// power iteration.
pub fn mean_curvature<F: Smooth>(objectives: &[F]) -> f64 {
    let Some(first) = objectives.first() else {
        return 0.0;
    };
    let d = first.dim();
    let n = objectives.len() as f64;
    let apply = |v: &ModelVector| -> ModelVector {
        let mut acc = ModelVector::zeros(d);
        for f in objectives {
            acc += f.curvature_apply(v);
        }
        acc / n
    };
    // Uneven start so that no eigenvector is orthogonal to it by symmetry.
    let mut v = ModelVector::from_fn(d, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..500 {
        let w = apply(&v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - estimate).abs() <= 1e-12 * next.abs() {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate
}
