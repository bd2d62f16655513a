use nalgebra::{Cholesky, DMatrix, Dyn, LU};

use super::{LocalObjective, PenalizedSubproblem, Smooth, SolverError};
use crate::ModelVector;

/// Least-squares shard objective `½‖Xθ − y‖²`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    design: DMatrix<f64>,
    targets: ModelVector,
    gram: DMatrix<f64>,
    moment: ModelVector,
}

impl QuadraticObjective {
    pub fn new(design: DMatrix<f64>, targets: ModelVector) -> Result<Self, SolverError> {
        if design.nrows() != targets.len() {
            return Err(SolverError::DimensionMismatch {
                expected: design.nrows(),
                actual: targets.len(),
            });
        }
        let gram = design.tr_mul(&design);
        let moment = design.tr_mul(&targets);
        Ok(Self {
            design,
            targets,
            gram,
            moment,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn targets(&self) -> &ModelVector {
        &self.targets
    }

    /// `XᵀX`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `Xᵀy`.
    pub fn moment(&self) -> &ModelVector {
        &self.moment
    }

    /// Multiplies every term by `c`, scaling the objective by `c²`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::new(&self.design * c, &self.targets * c).expect("shapes unchanged")
    }
}

impl Smooth for QuadraticObjective {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, theta: &ModelVector) -> f64 {
        0.5 * (&self.design * theta - &self.targets).norm_squared()
    }

    fn gradient(&self, theta: &ModelVector) -> ModelVector {
        &self.gram * theta - &self.moment
    }

    fn curvature_apply(&self, v: &ModelVector) -> ModelVector {
        &self.gram * v
    }
}

impl LocalObjective for QuadraticObjective {
    fn solve(&mut self, sub: &PenalizedSubproblem, _warm: &ModelVector) -> Result<ModelVector, SolverError> {
        solve_quadratic(self, sub)
    }
}

/// Solves `(XᵀX + aρI) θ = Xᵀy − g + ρ Σ_j z_j` exactly.
///
/// Uses a Cholesky factorization, falling back to LU when the system is not
/// positive definite (only possible with `ρ = 0`), followed by one round of
/// iterative refinement if the residual misses `1e-10·‖rhs‖`.
pub fn solve_quadratic(f: &QuadraticObjective, sub: &PenalizedSubproblem) -> Result<ModelVector, SolverError> {
    let d = f.dim();
    if sub.dim() != d {
        return Err(SolverError::DimensionMismatch {
            expected: d,
            actual: sub.dim(),
        });
    }
    let mut lhs = f.gram.clone();
    let shift = sub.anchors.len() as f64 * sub.rho;
    for i in 0..d {
        lhs[(i, i)] += shift;
    }
    let mut rhs = &f.moment - &sub.dual_drift;
    for z in &sub.anchors {
        rhs.axpy(sub.rho, z, 1.0);
    }

    let factor = Factor::new(lhs.clone())?;
    let mut theta = factor.solve(&rhs);
    let tolerance = 1e-10 * rhs.norm();
    let mut residual = (&lhs * &theta - &rhs).norm();
    if residual > tolerance {
        let correction = factor.solve(&(&rhs - &lhs * &theta));
        theta += correction;
        residual = (&lhs * &theta - &rhs).norm();
    }
    if residual > tolerance {
        return Err(SolverError::Inaccurate { residual, tolerance });
    }
    Ok(theta)
}

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl Factor {
    fn new(m: DMatrix<f64>) -> Result<Self, SolverError> {
        match Cholesky::new(m.clone()) {
            Some(c) => Ok(Self::Cholesky(c)),
            None => {
                let lu = m.lu();
                if lu.is_invertible() && lu.determinant() != 0.0 {
                    Ok(Self::Lu(lu))
                } else {
                    Err(SolverError::Singular)
                }
            }
        }
    }

    fn solve(&self, b: &ModelVector) -> ModelVector {
        match self {
            Self::Cholesky(c) => c.solve(b),
            Self::Lu(lu) => lu.solve(b).expect("checked invertible"),
        }
    }
}
