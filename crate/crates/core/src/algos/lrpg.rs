use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{mean_of, Batch, UpdateDiagnostics};
use crate::error::{invalid, Error, Result};
use crate::search::SearchDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrpgConfig {
    pub alpha: f64,
}

impl Default for LrpgConfig {
    fn default() -> Self {
        Self { alpha: 0.001 }
    }
}

impl LrpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Likelihood-ratio gradient of the expected return w.r.t. the mean, with
/// the batch mean reward as baseline:
/// `(1/N) sum_i Sigma^-1 (theta_i - mu) (R_i - R_bar)`.
///
/// Needs an invertible covariance; templates at `gamma = 1` are rejected.
pub fn lrpg_gradient(batch: &Batch, dist: &SearchDistribution) -> Result<DVector<f64>> {
    let d = dist.dim();
    if batch.thetas().ncols() != d {
        return Err(invalid(format!(
            "batch has {} parameters, distribution has {}",
            batch.thetas().ncols(),
            d
        )));
    }
    let chol = dist
        .cov
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance)?;
    let rewards = batch.rewards().as_slice();
    let baseline = mean_of(rewards);
    let mut acc = DVector::zeros(d);
    for (i, r) in rewards.iter().enumerate() {
        let advantage = r - baseline;
        if advantage == 0.0 {
            continue;
        }
        let dev = batch.thetas().row(i).transpose() - &dist.mean;
        acc.axpy(advantage, &dev, 1.0);
    }
    acc /= batch.len() as f64;
    let grad = chol.solve(&acc);
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    Ok(grad)
}

/// `mu <- mu + alpha * grad`; the covariance is carried over unchanged.
pub fn lrpg_update(
    dist: &SearchDistribution,
    grad: &DVector<f64>,
    cfg: &LrpgConfig,
) -> Result<SearchDistribution> {
    if grad.len() != dist.dim() || grad.iter().any(|v| !v.is_finite()) {
        return Err(invalid(
            "gradient must be finite and match the distribution",
        ));
    }
    Ok(SearchDistribution {
        mean: &dist.mean + grad * cfg.alpha,
        cov: dist.cov.clone(),
    })
}

pub fn lrpg_step(
    batch: &Batch,
    dist: &SearchDistribution,
    cfg: &LrpgConfig,
) -> Result<(SearchDistribution, UpdateDiagnostics)> {
    cfg.validate()?;
    let grad = lrpg_gradient(batch, dist)?;
    let next = lrpg_update(dist, &grad, cfg)?;
    let mean_reward = batch.mean_reward();
    Ok((
        next,
        UpdateDiagnostics {
            mean_reward,
            baseline: mean_reward,
            eta: None,
            empirical_kl: None,
            gradient_norm: Some(grad.norm()),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::sample;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn unit(d: usize) -> SearchDistribution {
        SearchDistribution::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap()
    }

    #[test]
    fn equal_rewards_give_zero_gradient() {
        let dist = unit(33);
        let thetas = sample(&dist, 50, 1).unwrap();
        let batch = Batch::new(thetas, DVector::from_element(50, 0.37)).unwrap();
        let g = lrpg_gradient(&batch, &dist).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let zero = Batch::new(batch.thetas().clone(), DVector::zeros(50)).unwrap();
        assert!(lrpg_gradient(&zero, &dist)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn two_sample_arithmetic() {
        let dist = unit(3);
        let thetas = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        let batch = Batch::new(thetas, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let g = lrpg_gradient(&batch, &dist).unwrap();
        assert_eq!(g, DVector::from_vec(vec![0.5, 0.0, 0.0]));
    }

    #[test]
    fn singular_covariance_rejected() {
        let dist = SearchDistribution::new(DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
        let batch = Batch::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert!(matches!(
            lrpg_gradient(&batch, &dist),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn update_moves_mean_only() {
        let dist = SearchDistribution::new(
            DVector::from_element(3, 0.2),
            DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 3.0]),
        )
        .unwrap();
        let cfg = LrpgConfig::default();
        let same = lrpg_update(&dist, &DVector::zeros(3), &cfg).unwrap();
        assert_eq!(same, dist);
        let mut e1 = DVector::zeros(3);
        e1[0] = 1.0;
        let moved = lrpg_update(&dist, &e1, &cfg).unwrap();
        assert!((moved.mean[0] - 0.201).abs() < 1e-15);
        assert_eq!(moved.mean[1], 0.2);
        assert_eq!(moved.cov, dist.cov);
        assert!(lrpg_update(&dist, &DVector::from_element(3, f64::NAN), &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn baseline_invariance(seed in 0u64..1000, shift in -100.0f64..100.0) {
            let dist = unit(8);
            let thetas = sample(&dist, 40, seed).unwrap();
            let rewards = DVector::from_fn(40, |i, _| (i as f64 * 0.37).sin());
            let shifted = rewards.add_scalar(shift);
            let g1 = lrpg_gradient(&Batch::new(thetas.clone(), rewards).unwrap(), &dist).unwrap();
            let g2 = lrpg_gradient(&Batch::new(thetas, shifted).unwrap(), &dist).unwrap();
            prop_assert!((g1 - g2).amax() < 1e-10);
        }
    }
}
