use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{kl_gaussian, Batch, UpdateDiagnostics};
use crate::error::{invalid, Error, Result};
use crate::search::SearchDistribution;

/// Eigenvalue floor applied to refitted covariances.
pub const COV_FLOOR: f64 = 1e-10;

const MAX_DOUBLINGS: usize = 2048;
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepsConfig {
    /// KL bound.
    pub epsilon: f64,
    pub eta_min: f64,
    /// Relative tolerance on the temperature.
    pub tolerance: f64,
    pub cov_floor: f64,
}

impl Default for RepsConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.11,
            eta_min: 1e-8,
            tolerance: 1e-10,
            cov_floor: COV_FLOOR,
        }
    }
}

impl RepsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.eta_min > 0.0 && self.eta_min.is_finite()) {
            return Err(invalid("eta_min must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        if !(self.cov_floor >= 0.0) {
            return Err(invalid("cov_floor must be non-negative"));
        }
        Ok(())
    }
}

fn max_reward(rewards: &[f64]) -> f64 {
    rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    Ok(())
}

/// Sample-based dual
/// `g(eta) = eps * eta + eta * log((1/N) sum_i exp((R_i - R_max) / eta)) + R_max`.
pub fn reps_dual(eta: f64, rewards: &[f64], epsilon: f64) -> Result<f64> {
    check_eta(eta)?;
    if rewards.is_empty() {
        return Err(invalid("rewards must not be empty"));
    }
    let r_max = max_reward(rewards);
    let mean_exp = rewards
        .iter()
        .map(|r| ((r - r_max) / eta).exp())
        .sum::<f64>()
        / rewards.len() as f64;
    Ok(epsilon * eta + eta * mean_exp.ln() + r_max)
}

/// `g'(eta) = eps + log(mean exp(s)) - sum exp(s) s / sum exp(s)` with
/// `s_i = (R_i - R_max) / eta`. Non-decreasing in `eta`.
pub fn reps_dual_derivative(eta: f64, rewards: &[f64], epsilon: f64) -> Result<f64> {
    check_eta(eta)?;
    if rewards.is_empty() {
        return Err(invalid("rewards must not be empty"));
    }
    let r_max = max_reward(rewards);
    let (mut z, mut zs) = (0.0, 0.0);
    for r in rewards {
        let s = (r - r_max) / eta;
        let e = s.exp();
        z += e;
        zs += e * s;
    }
    Ok(epsilon + (z / rewards.len() as f64).ln() - zs / z)
}

/// Minimise the convex dual over `[eta_min, inf)`: bracket by doubling
/// until the dual increases, then bisect the derivative in log space.
pub fn reps_solve_eta(rewards: &[f64], cfg: &RepsConfig) -> Result<f64> {
    cfg.validate()?;
    if rewards.len() < 2 {
        return Err(invalid("need at least 2 rewards"));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(invalid("rewards must be finite"));
    }
    let eps = cfg.epsilon;
    let slope = |eta: f64| reps_dual_derivative(eta, rewards, eps);

    let mut lo = cfg.eta_min;
    if slope(lo)? >= 0.0 {
        return Ok(lo);
    }
    let mut hi = lo;
    let mut doublings = 0;
    loop {
        hi *= 2.0;
        doublings += 1;
        let g = slope(hi)?;
        if !g.is_finite() || doublings > MAX_DOUBLINGS {
            return Err(Error::Solver {
                reason: "could not bracket the dual minimum".into(),
                lo,
                hi,
                iterations: doublings,
            });
        }
        if g > 0.0 {
            break;
        }
        lo = hi;
    }

    let mut iterations = 0;
    while hi / lo - 1.0 > cfg.tolerance {
        if iterations >= MAX_BISECTIONS {
            return Err(Error::Solver {
                reason: "bisection did not converge".into(),
                lo,
                hi,
                iterations,
            });
        }
        let mid = (lo * hi).sqrt();
        if slope(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Ok((lo * hi).sqrt())
}

/// Unnormalised sample weights `exp((R_i - R_max) / eta)`; the max weight
/// is exactly 1.
pub fn reps_weights(rewards: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_eta(eta)?;
    let r_max = max_reward(rewards);
    Ok(rewards.iter().map(|r| ((r - r_max) / eta).exp()).collect())
}

/// Weighted maximum-likelihood refit with the unbiased normaliser
/// `Z = ((sum d)^2 - sum d^2) / sum d`, eigenvalue-floored at
/// [`COV_FLOOR`].
pub fn reps_update(batch: &Batch, weights: &[f64]) -> Result<SearchDistribution> {
    reps_update_floored(batch, weights, COV_FLOOR)
}

pub(crate) fn reps_update_floored(
    batch: &Batch,
    weights: &[f64],
    floor: f64,
) -> Result<SearchDistribution> {
    let n = batch.len();
    if weights.len() != n {
        return Err(invalid(format!(
            "{} weights for {} samples",
            weights.len(),
            n
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(invalid("weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return Err(invalid("weights must not all be zero"));
    }
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    let z = (sum * sum - sum_sq) / sum;
    if !(z > 0.0) {
        return Err(Error::DegenerateBatch(format!(
            "normaliser Z = {z:e}; a single sample carries all the weight"
        )));
    }

    let thetas = batch.thetas();
    let d = thetas.ncols();
    let mut mean = DVector::zeros(d);
    for (i, w) in weights.iter().enumerate() {
        mean.axpy(*w, &thetas.row(i).transpose(), 1.0);
    }
    mean /= sum;

    let mut cov = DMatrix::zeros(d, d);
    for (i, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let dev = thetas.row(i).transpose() - &mean;
        cov.ger(*w, &dev, &dev, 1.0);
    }
    cov /= z;
    let cov = floor_eigenvalues(symmetrize(cov), floor);
    Ok(SearchDistribution { mean, cov })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Raise eigenvalues below `floor`. Matrices already above the floor are
/// returned untouched. The clamp target carries a round-off margin so the
/// reconstructed matrix still measures `>= floor`.
fn floor_eigenvalues(cov: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    if floor <= 0.0 {
        return cov;
    }
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= floor {
        return cov;
    }
    let d = cov.nrows();
    let lambda_max = eig.eigenvalues.max().max(floor);
    let target = floor + 64.0 * d as f64 * f64::EPSILON * lambda_max;
    let clamped = eig.eigenvalues.map(|l| l.max(target));
    let v = &eig.eigenvectors;
    symmetrize(v * DMatrix::from_diagonal(&clamped) * v.transpose())
}

/// One REPS iteration: solve for the temperature, weight the batch, refit.
/// The diagnostics carry `KL(new || old)` when the old covariance is
/// positive definite.
pub fn reps_step(
    batch: &Batch,
    old: &SearchDistribution,
    cfg: &RepsConfig,
) -> Result<(SearchDistribution, UpdateDiagnostics)> {
    cfg.validate()?;
    if batch.thetas().ncols() != old.dim() {
        return Err(invalid("batch and distribution dimensions differ"));
    }
    let rewards = batch.rewards().as_slice();
    let eta = reps_solve_eta(rewards, cfg)?;
    let weights = reps_weights(rewards, eta)?;
    let next = reps_update_floored(batch, &weights, cfg.cov_floor)?;
    let empirical_kl = match kl_gaussian(&next, old) {
        Ok(kl) => Some(kl),
        Err(Error::SingularCovariance) => None,
        Err(e) => return Err(e),
    };
    Ok((
        next,
        UpdateDiagnostics {
            mean_reward: batch.mean_reward(),
            baseline: max_reward(rewards),
            eta: Some(eta),
            empirical_kl,
            gradient_norm: None,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dual_constant_rewards() {
        for eta in [1e-6, 0.1, 1.0, 37.0] {
            let g = reps_dual(eta, &[2.5; 7], 0.11).unwrap();
            assert!((g - (0.11 * eta + 2.5)).abs() < 1e-12);
        }
        assert!(reps_dual(0.0, &[1.0], 0.1).is_err());
    }

    #[test]
    fn dual_two_point_value() {
        let g = reps_dual(1.0, &[0.0, 1.0], 0.11).unwrap();
        let expect = 0.11 + ((1.0 + 1f64.exp()) / 2.0).ln();
        assert!((g - expect).abs() < 1e-14);
        assert!((g - 0.11 - 0.620_114_506_958_277_5).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let r = [0.3, -1.2, 0.8, 0.1, 2.0];
        for eta in [0.05, 0.3, 1.0, 4.0] {
            let h = eta * 1e-6;
            let fd = (reps_dual(eta + h, &r, 0.2).unwrap() - reps_dual(eta - h, &r, 0.2).unwrap())
                / (2.0 * h);
            let an = reps_dual_derivative(eta, &r, 0.2).unwrap();
            assert!((fd - an).abs() < 1e-6, "eta {eta}: {fd} vs {an}");
        }
    }

    #[test]
    fn equal_rewards_clamp_to_eta_min() {
        let cfg = RepsConfig::default();
        assert_eq!(reps_solve_eta(&[1.0; 10], &cfg).unwrap(), cfg.eta_min);
    }

    #[test]
    fn solver_rejects_short_input() {
        assert!(reps_solve_eta(&[1.0], &RepsConfig::default()).is_err());
    }

    #[test]
    fn two_point_minimiser_matches_grid() {
        let rewards = [0.0, 1.0];
        let cfg = RepsConfig::default();
        let eta = reps_solve_eta(&rewards, &cfg).unwrap();
        // 10^6-point log grid over [1e-6, 100].
        let n = 1_000_000;
        let (lo, hi) = (1e-6f64.ln(), 100f64.ln());
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..n {
            let e = (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp();
            let g = reps_dual(e, &rewards, 0.11).unwrap();
            if g < best.0 {
                best = (g, e);
            }
        }
        assert!(
            ((eta - best.1) / best.1).abs() < 1e-3,
            "{eta} vs {}",
            best.1
        );
    }

    #[test]
    fn eta_scales_with_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = RepsConfig::default();
        for _ in 0..20 {
            let r: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = rng.random_range(0.1..10.0);
            let scaled: Vec<f64> = r.iter().map(|v| v * c).collect();
            let e1 = reps_solve_eta(&r, &cfg).unwrap();
            let e2 = reps_solve_eta(&scaled, &cfg).unwrap();
            assert!((e2 / (c * e1) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn optimal_weights_saturate_the_bound() {
        // At an interior optimum the weight distribution's KL to uniform is eps.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = RepsConfig::default();
        let eta = reps_solve_eta(&r, &cfg).unwrap();
        let w = reps_weights(&r, eta).unwrap();
        let s: f64 = w.iter().sum();
        let n = w.len() as f64;
        let kl: f64 = w.iter().map(|x| x / s * (n * x / s).ln()).sum();
        assert!((kl - cfg.epsilon).abs() < 1e-8, "kl {kl}");
    }

    #[test]
    fn weights_values() {
        assert_eq!(reps_weights(&[3.0; 4], 0.5).unwrap(), vec![1.0; 4]);
        let w = reps_weights(&[0.0, 1.0], 1.0).unwrap();
        assert!((w[0] - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(w[1], 1.0);
        let w = reps_weights(&[-3.0, 5.0, 0.2], 1e6).unwrap();
        let ratio = w.iter().cloned().fold(0.0, f64::max) / w.iter().cloned().fold(1.0, f64::min);
        assert!(ratio - 1.0 < 1e-5);
    }

    #[test]
    fn update_two_point() {
        let thetas = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let batch = Batch::new(thetas, DVector::zeros(2)).unwrap();
        let next = reps_update_floored(&batch, &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(next.mean, DVector::zeros(2));
        assert_eq!(next.cov[(0, 0)], 2.0);
    }

    #[test]
    fn update_rejects_degenerate_weights() {
        let thetas = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let batch = Batch::new(thetas, DVector::zeros(3)).unwrap();
        assert!(matches!(
            reps_update(&batch, &[0.0, 1.0, 0.0]),
            Err(Error::DegenerateBatch(_))
        ));
        assert!(reps_update(&batch, &[0.0, 0.0, 0.0]).is_err());
        assert!(reps_update(&batch, &[1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn update_matches_extended_precision_oracle() {
        // Straight-line refit using compensated (two-sum) accumulation.
        fn two_sum(acc: &mut (f64, f64), x: f64) {
            let s = acc.0 + x;
            let bp = s - acc.0;
            let err = (acc.0 - (s - bp)) + (x - bp);
            acc.0 = s;
            acc.1 += err;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (n, d) = (40, 5);
        let thetas = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let batch = Batch::new(thetas.clone(), DVector::zeros(n)).unwrap();
        let got = reps_update_floored(&batch, &w, 0.0).unwrap();

        let mut sw = (0.0, 0.0);
        let mut sw2 = (0.0, 0.0);
        for x in &w {
            two_sum(&mut sw, *x);
            two_sum(&mut sw2, x * x);
        }
        let sum = sw.0 + sw.1;
        let mut mu = vec![0.0; d];
        for (j, m) in mu.iter_mut().enumerate() {
            let mut acc = (0.0, 0.0);
            for i in 0..n {
                two_sum(&mut acc, w[i] * thetas[(i, j)]);
            }
            *m = (acc.0 + acc.1) / sum;
        }
        let z = (sum * sum - (sw2.0 + sw2.1)) / sum;
        for a in 0..d {
            assert!((got.mean[a] - mu[a]).abs() < 1e-13);
            for b in 0..d {
                let mut acc = (0.0, 0.0);
                for i in 0..n {
                    two_sum(
                        &mut acc,
                        w[i] * (thetas[(i, a)] - mu[a]) * (thetas[(i, b)] - mu[b]),
                    );
                }
                let expect = (acc.0 + acc.1) / z;
                assert!((got.cov[(a, b)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn floor_applies_to_rank_deficient_fit() {
        let old = SearchDistribution::new(DVector::zeros(10), DMatrix::identity(10, 10)).unwrap();
        let thetas = sample(&old, 4, 5).unwrap();
        let batch = Batch::new(thetas, DVector::zeros(4)).unwrap();
        let next = reps_update(&batch, &[1.0; 4]).unwrap();
        let min = next.cov.clone().symmetric_eigenvalues().min();
        assert!(min >= COV_FLOOR, "min eigenvalue {min:e}");
        assert_eq!(next.cov, next.cov.transpose());
    }

    #[test]
    fn step_with_equal_rewards_uses_sample_mean() {
        let old = SearchDistribution::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let thetas = sample(&old, 20, 1).unwrap();
        let batch = Batch::new(thetas.clone(), DVector::from_element(20, 4.0)).unwrap();
        let (next, diag) = reps_step(&batch, &old, &RepsConfig::default()).unwrap();
        let mean = thetas.row_mean().transpose();
        assert!((next.mean - mean).amax() < 1e-15);
        assert_eq!(diag.eta, Some(RepsConfig::default().eta_min));
        assert!(diag.empirical_kl.is_some());
    }

    #[test]
    fn smaller_bound_gives_smaller_step() {
        let old = SearchDistribution::new(DVector::zeros(6), DMatrix::identity(6, 6)).unwrap();
        let thetas = sample(&old, 500, 12).unwrap();
        let rewards = DVector::from_fn(500, |i, _| thetas[(i, 0)] - 0.5 * thetas[(i, 1)].powi(2));
        let batch = Batch::new(thetas, rewards).unwrap();
        let kl = |eps: f64| {
            let cfg = RepsConfig {
                epsilon: eps,
                ..Default::default()
            };
            reps_step(&batch, &old, &cfg)
                .unwrap()
                .1
                .empirical_kl
                .unwrap()
        };
        let (a, b, c) = (kl(0.5), kl(0.11), kl(0.01));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn step_on_singular_old_has_no_kl() {
        let mut cov = DMatrix::identity(3, 3);
        cov[(2, 2)] = 0.0;
        let old = SearchDistribution::new(DVector::zeros(3), cov).unwrap();
        let thetas = sample(&old, 30, 2).unwrap();
        let rewards = DVector::from_fn(30, |i, _| thetas[(i, 0)]);
        let batch = Batch::new(thetas, rewards).unwrap();
        let (_, diag) = reps_step(&batch, &old, &RepsConfig::default()).unwrap();
        assert_eq!(diag.empirical_kl, None);
    }
}
