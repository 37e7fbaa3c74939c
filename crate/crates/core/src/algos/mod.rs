//! Episode-based policy search updates over a [`SearchDistribution`].
//!
//! Both algorithms consume a [`Batch`] of sampled parameter vectors and
//! their episode returns. LRPG moves only the mean; REPS refits mean and
//! covariance by reward-weighted maximum likelihood under a KL bound.

mod lrpg;
mod reps;

pub use lrpg::{lrpg_gradient, lrpg_step, lrpg_update, LrpgConfig};
pub use reps::{
    reps_dual, reps_dual_derivative, reps_solve_eta, reps_step, reps_update, reps_weights,
    RepsConfig, COV_FLOOR,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::search::SearchDistribution;

/// Sampled parameters (one row per rollout) and their returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    thetas: DMatrix<f64>,
    rewards: DVector<f64>,
}

impl Batch {
    pub fn new(thetas: DMatrix<f64>, rewards: DVector<f64>) -> Result<Self> {
        if thetas.nrows() < 2 {
            return Err(invalid(format!(
                "batch needs at least 2 samples, got {}",
                thetas.nrows()
            )));
        }
        if thetas.nrows() != rewards.len() {
            return Err(invalid(format!(
                "{} parameter rows but {} rewards",
                thetas.nrows(),
                rewards.len()
            )));
        }
        if thetas.iter().chain(rewards.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("batch entries must be finite"));
        }
        Ok(Self { thetas, rewards })
    }

    pub fn thetas(&self) -> &DMatrix<f64> {
        &self.thetas
    }

    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        mean_of(self.rewards.as_slice())
    }
}

/// Mean computed as an offset from the first entry, so a constant input
/// returns that constant exactly.
pub(crate) fn mean_of(v: &[f64]) -> f64 {
    let first = v[0];
    first + v.iter().map(|x| x - first).sum::<f64>() / v.len() as f64
}

/// Per-update diagnostics surfaced to the harness.
///
/// `baseline` is the batch mean for LRPG and the max reward used to shift
/// the exponentials for REPS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics {
    pub mean_reward: f64,
    pub baseline: f64,
    pub eta: Option<f64>,
    pub empirical_kl: Option<f64>,
    pub gradient_norm: Option<f64>,
}

/// Closed-form `KL(p || q)` between multivariate Gaussians. `q` must be
/// positive definite; a singular `p` gives `+inf`.
pub fn kl_gaussian(p: &SearchDistribution, q: &SearchDistribution) -> Result<f64> {
    let d = p.dim();
    if q.dim() != d {
        return Err(invalid("distributions have different dimensions"));
    }
    let chol_q = q.cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let Some(chol_p) = p.cov.clone().cholesky() else {
        return Ok(f64::INFINITY);
    };
    let log_det = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det_q = log_det(&chol_q.l_dirty().clone_owned());
    let log_det_p = log_det(&chol_p.l_dirty().clone_owned());
    if !log_det_q.is_finite() {
        return Err(Error::SingularCovariance);
    }
    let trace = chol_q.solve(&p.cov).trace();
    let diff = &q.mean - &p.mean;
    let quad = diff.dot(&chol_q.solve(&diff));
    Ok((0.5 * (trace + quad - d as f64 + log_det_q - log_det_p)).max(0.0))
}
