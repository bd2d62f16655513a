use nalgebra::{Cholesky, DMatrix};

use super::{Dataset, QuadraticObjective, Smooth, SolverError};
use crate::ModelVector;

/// Consensus optimum of `Σ_n f_n(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedOptimum {
    pub theta_star: ModelVector,
    pub f_star: f64,
    /// Set when the pooled normal equations needed a `1e-12·I` ridge.
    pub regularized: bool,
}

/// Solves the pooled normal equations `(Σ XᵀX) θ = Σ Xᵀy`.
///
/// With `allow_ridge`, a singular pooled system is retried with `1e-12·I`
/// added and the result is flagged.
pub fn centralized_oracle(objectives: &[QuadraticObjective], allow_ridge: bool) -> Result<CentralizedOptimum, SolverError> {
    let first = objectives.first().ok_or(SolverError::InvalidSetting("no objectives"))?;
    let d = first.dim();
    let mut gram = DMatrix::zeros(d, d);
    let mut moment = ModelVector::zeros(d);
    for f in objectives {
        if f.dim() != d {
            return Err(SolverError::DimensionMismatch {
                expected: d,
                actual: f.dim(),
            });
        }
        gram += f.gram();
        moment += f.moment();
    }
    let scale = gram.diagonal().amax().max(f64::MIN_POSITIVE);
    // Rank-deficient systems can factor with a pivot at rounding level.
    let factor = |m: DMatrix<f64>| {
        Cholesky::new(m).filter(|c| c.l_dirty().diagonal().iter().all(|&l| l * l > 1e-12 * scale))
    };
    let (chol, regularized) = match factor(gram.clone()) {
        Some(c) => (c, false),
        None if allow_ridge => {
            let ridged = gram + DMatrix::identity(d, d) * 1e-12;
            (Cholesky::new(ridged).ok_or(SolverError::Singular)?, true)
        }
        None => return Err(SolverError::Singular),
    };
    let theta_star = chol.solve(&moment);
    let f_star = objectives.iter().map(|f| f.value(&theta_star)).sum();
    Ok(CentralizedOptimum {
        theta_star,
        f_star,
        regularized,
    })
}

/// Dual variables at the optimum from `λ*_n = λ*_{n−1} − ∇f_n(θ*)`, `λ*_0 = 0`.
///
/// Returns `N − 1` link multipliers after checking the last worker's
/// condition `λ*_{N−1} = ∇f_N(θ*)` to `1e-8` (scaled by the gradient size
/// when gradients are large).
pub fn dual_oracle<F: Smooth>(objectives: &[F], theta_star: &ModelVector) -> Result<Vec<ModelVector>, SolverError> {
    let n = objectives.len();
    if n < 2 {
        return Err(SolverError::InvalidSetting("a chain needs at least two workers"));
    }
    let gradients: Vec<ModelVector> = objectives.iter().map(|f| f.gradient(theta_star)).collect();
    let mut lambdas = Vec::with_capacity(n - 1);
    let mut acc = ModelVector::zeros(theta_star.len());
    for g in &gradients[..n - 1] {
        acc -= g;
        lambdas.push(acc.clone());
    }
    let scale = gradients.iter().map(|g| g.amax()).fold(1.0, f64::max);
    let terminal = (&lambdas[n - 2] - &gradients[n - 1]).norm();
    if terminal > 1e-8 * scale {
        return Err(SolverError::InconsistentOptimum(terminal));
    }
    Ok(lambdas)
}

/// Minimizer of the mean cross-entropy over a whole labelled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticReference {
    pub theta: ModelVector,
    pub loss: f64,
}

/// Damped Newton iterations on the pooled logistic loss, run until the
/// gradient norm falls below `1e-12` or the loss stops decreasing.
pub fn logistic_reference(data: &Dataset) -> Result<LogisticReference, SolverError> {
    let x = &data.features;
    let y = &data.targets;
    let m = x.nrows() as f64;
    let d = x.ncols();
    if x.nrows() == 0 {
        return Err(SolverError::InvalidSetting("empty dataset"));
    }
    let loss = |theta: &ModelVector| -> f64 {
        let z = x * theta;
        z.iter()
            .zip(y.iter())
            .map(|(&z, &l)| {
                let sp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                sp - l * z
            })
            .sum::<f64>()
            / m
    };
    let mut theta = ModelVector::zeros(d);
    let mut current = loss(&theta);
    for _ in 0..200 {
        let z = x * &theta;
        let p = z.map(|z| 1.0 / (1.0 + (-z).exp()));
        let grad = x.tr_mul(&(&p - y)) / m;
        if grad.norm() < 1e-12 {
            break;
        }
        let w = p.map(|p| p * (1.0 - p));
        let mut weighted = x.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut hess = x.tr_mul(&weighted) / m;
        for i in 0..d {
            hess[(i, i)] += 1e-14;
        }
        let step = Cholesky::new(hess).ok_or(SolverError::Singular)?.solve(&grad);
        let mut t = 1.0;
        let mut improved = false;
        while t >= 1e-10 {
            let trial = &theta - t * &step;
            let value = loss(&trial);
            if value <= current {
                improved = value < current;
                theta = trial;
                current = value;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(LogisticReference {
        theta,
        loss: current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64) -> QuadraticObjective {
        QuadraticObjective::new(DMatrix::identity(1, 1), ModelVector::from_column_slice(&[a])).unwrap()
    }

    #[test]
    fn identical_shards() {
        let opt = centralized_oracle(&[scalar(1.5), scalar(1.5), scalar(1.5)], false).unwrap();
        assert!((opt.theta_star[0] - 1.5).abs() < 1e-15);
        assert!(opt.f_star.abs() < 1e-30);
    }

    #[test]
    fn two_scalars() {
        let opt = centralized_oracle(&[scalar(0.0), scalar(2.0)], false).unwrap();
        assert!((opt.theta_star[0] - 1.0).abs() < 1e-15);
        assert!((opt.f_star - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_pool_needs_ridge() {
        let f = QuadraticObjective::new(DMatrix::from_row_slice(1, 2, &[1.0, -1.0]), ModelVector::from_column_slice(&[1.0])).unwrap();
        assert_eq!(centralized_oracle(&[f.clone(), f.clone()], false), Err(SolverError::Singular));
        assert!(centralized_oracle(&[f.clone(), f], true).unwrap().regularized);
    }

    #[test]
    fn matches_grid_search_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let shards: Vec<_> = (0..4)
            .map(|_| {
                let m = rng.gen_range(1..6);
                let x = DMatrix::from_fn(m, 1, |_, _| rng.gen_range(-2.0..2.0));
                let y = ModelVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
                QuadraticObjective::new(x, y).unwrap()
            })
            .collect();
        let opt = centralized_oracle(&shards, false).unwrap();
        let total = |t: f64| shards.iter().map(|f| f.value(&ModelVector::from_column_slice(&[t]))).sum::<f64>();
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..6 {
            let step = (hi - lo) / 1000.0;
            let best = (0..=1000)
                .map(|i| lo + i as f64 * step)
                .min_by(|a, b| total(*a).total_cmp(&total(*b)))
                .unwrap();
            lo = best - step;
            hi = best + step;
        }
        assert!((opt.theta_star[0] - 0.5 * (lo + hi)).abs() <= 1e-4);
    }

    #[test]
    fn dual_oracle_zero_gradients() {
        let shards = [scalar(1.0), scalar(1.0), scalar(1.0)];
        let lambdas = dual_oracle(&shards, &ModelVector::from_column_slice(&[1.0])).unwrap();
        assert_eq!(lambdas, vec![ModelVector::zeros(1); 2]);
    }

    #[test]
    fn dual_oracle_two_workers() {
        let shards = [scalar(0.0), scalar(2.0)];
        let lambdas = dual_oracle(&shards, &ModelVector::from_column_slice(&[1.0])).unwrap();
        // ∇f_1(1) = 1, so λ*_1 = −1 = ∇f_2(1).
        assert_eq!(lambdas, vec![ModelVector::from_column_slice(&[-1.0])]);
    }

    #[test]
    fn dual_oracle_three_workers() {
        let shards = [scalar(0.0), scalar(3.0), scalar(6.0)];
        let opt = centralized_oracle(&shards, false).unwrap();
        assert!((opt.theta_star[0] - 3.0).abs() < 1e-15);
        let lambdas = dual_oracle(&shards, &opt.theta_star).unwrap();
        // ∇f = θ − a = 3, 0, −3: λ*_1 = −3, λ*_2 = −3.
        assert_eq!(lambdas.len(), 2);
        assert!((lambdas[0][0] + 3.0).abs() < 1e-15);
        assert!((lambdas[1][0] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn dual_oracle_rejects_non_optimum() {
        let shards = [scalar(0.0), scalar(2.0)];
        assert!(matches!(
            dual_oracle(&shards, &ModelVector::from_column_slice(&[0.0])),
            Err(SolverError::InconsistentOptimum(_))
        ));
    }

    #[test]
    fn logistic_reference_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = DMatrix::from_fn(200, 3, |_, _| rng.gen_range(-1.0..1.0));
        let y = ModelVector::from_fn(200, |_, _| f64::from(rng.gen_bool(0.4)));
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let reference = logistic_reference(&data).unwrap();
        let f = super::super::LogisticObjective::new(x, y, Default::default(), 0).unwrap();
        assert!(f.gradient(&reference.theta).norm() < 1e-8);
        assert!((f.value(&reference.theta) / 200.0 - reference.loss).abs() < 1e-14);
    }
}
