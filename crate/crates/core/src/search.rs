//! Gaussian search distribution over flattened policy parameters, and
//! gait-symmetry covariance templates.
//!
//! A gait is described by one quarter-phase offset per leg. Delaying a leg
//! by `k` quarters is the same as cyclically shifting each of its joints'
//! four weights by `k` (see [`crate::policy::cyclic_shift`]), so leg `i`'s
//! weights relate to leg `j`'s through `S^(o_i - o_j)`. The template puts
//! exactly that permutation on the hip-hip and knee-knee sub-blocks of every
//! leg pair; hips and knees are never coupled and the temporal scale stays
//! diagonal.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::policy::cyclic_shift;
use crate::NUM_LEGS;

/// Bases per joint assumed by the templates.
pub const QUARTERS: usize = 4;
/// Weights per leg (hip + knee).
pub const LEG_WEIGHTS: usize = 2 * QUARTERS;
/// Weight dimensions.
pub const WEIGHT_DIM: usize = NUM_LEGS * LEG_WEIGHTS;
/// Full parameter dimension (weights + temporal scale).
pub const PARAM_DIM: usize = WEIGHT_DIM + 1;

/// Per-leg quarter-phase offsets in leg order front-right, hind-left,
/// front-left, hind-right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaitSpec {
    pub quarter_offsets: [u8; NUM_LEGS],
}

impl GaitSpec {
    pub fn new(quarter_offsets: [u8; NUM_LEGS]) -> Result<Self> {
        if quarter_offsets.iter().any(|&o| o as usize >= QUARTERS) {
            return Err(invalid(format!(
                "quarter offsets must be in 0..4, got {quarter_offsets:?}"
            )));
        }
        Ok(Self { quarter_offsets })
    }

    /// Footfall order front-right, hind-left, front-left, hind-right, a
    /// quarter cycle apart.
    pub fn walk() -> Self {
        Self {
            quarter_offsets: [0, 1, 2, 3],
        }
    }

    /// Diagonal pairs synchronous, half a cycle apart.
    pub fn trot() -> Self {
        Self {
            quarter_offsets: [0, 0, 2, 2],
        }
    }

    /// Lateral pairs synchronous.
    pub fn pace() -> Self {
        Self {
            quarter_offsets: [0, 2, 2, 0],
        }
    }

    /// Front pair and hind pair synchronous.
    pub fn bound() -> Self {
        Self {
            quarter_offsets: [0, 2, 0, 2],
        }
    }

    /// Shift exponent taking leg `from`'s weights to leg `to`'s.
    pub fn relative_shift(&self, to: usize, from: usize) -> usize {
        (self.quarter_offsets[to] as usize + QUARTERS - self.quarter_offsets[from] as usize)
            % QUARTERS
    }
}

/// 0/1 template `I + O` over the full parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTemplate {
    matrix: DMatrix<f64>,
}

impl CovarianceTemplate {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Off-diagonal coupling `O = template - I`.
    pub fn coupling(&self) -> DMatrix<f64> {
        &self.matrix - DMatrix::identity(PARAM_DIM, PARAM_DIM)
    }

    /// Identity template (no coupling).
    pub fn diagonal() -> Self {
        Self {
            matrix: DMatrix::identity(PARAM_DIM, PARAM_DIM),
        }
    }
}

/// `S^k` as a dense 4x4 matrix, where `(S w)_i = w_{i-1 mod 4}`.
pub fn shift_matrix(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(QUARTERS, QUARTERS, |r, c| {
        if c == (r + QUARTERS - k % QUARTERS) % QUARTERS {
            1.0
        } else {
            0.0
        }
    })
}

pub fn build_template(gait: &GaitSpec) -> CovarianceTemplate {
    let mut m = DMatrix::zeros(PARAM_DIM, PARAM_DIM);
    for i in 0..NUM_LEGS {
        for j in 0..NUM_LEGS {
            let block = shift_matrix(gait.relative_shift(i, j));
            for joint in 0..2 {
                let r0 = i * LEG_WEIGHTS + joint * QUARTERS;
                let c0 = j * LEG_WEIGHTS + joint * QUARTERS;
                m.view_mut((r0, c0), (QUARTERS, QUARTERS)).copy_from(&block);
            }
        }
    }
    m[(WEIGHT_DIM, WEIGHT_DIM)] = 1.0;
    CovarianceTemplate { matrix: m }
}

/// `sigma2 * (I + gamma * O)`. Positive semidefinite for `gamma` in
/// `[0, 1]`; singular at `gamma = 1` unless the template is diagonal.
pub fn scale_template(
    template: &CovarianceTemplate,
    sigma2: f64,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid(format!("gamma must be in [0, 1], got {gamma}")));
    }
    let n = template.matrix.nrows();
    Ok(DMatrix::from_fn(n, n, |r, c| {
        let t = template.matrix[(r, c)];
        if r == c {
            sigma2
        } else {
            sigma2 * gamma * t
        }
    }))
}

/// Gaussian `N(mean, cov)` over flattened parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchDistribution {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl SearchDistribution {
    /// Checks shape, symmetry to 1e-12 and eigenvalues >= -1e-10.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(invalid(format!(
                "covariance is {}x{}, mean has {} entries",
                cov.nrows(),
                cov.ncols(),
                d
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("distribution entries must be finite"));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 {
            return Err(invalid(format!("covariance asymmetric by {asym:e}")));
        }
        let min_eig = cov.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 {
            return Err(invalid(format!(
                "covariance not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric square-root factor `V sqrt(max(L, 0))` with eigenvalues at the
/// round-off level set to exactly zero, so singular covariances sample on
/// their range.
pub fn sampling_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let eig = cov.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.max().max(0.0);
    let noise = 16.0 * f64::EPSILON * d as f64 * lambda_max;
    let mut factor = eig.eigenvectors;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-8 {
            return Err(invalid(format!(
                "covariance has negative eigenvalue {lambda:e}"
            )));
        }
        let scale = if lambda <= noise { 0.0 } else { lambda.sqrt() };
        factor.column_mut(k).scale_mut(scale);
    }
    Ok(factor)
}

/// Draw `n` samples as rows of an `n x d` matrix. Deterministic in `seed`.
pub fn sample(dist: &SearchDistribution, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let d = dist.dim();
    let factor = sampling_factor(&dist.cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, d);
    let mut z = DVector::zeros(d);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let theta = &dist.mean + &factor * &z;
        out.row_mut(i).copy_from(&theta.transpose());
    }
    Ok(out)
}

/// Multivariate normal log-density; needs a positive definite covariance.
pub fn log_density(dist: &SearchDistribution, theta: &DVector<f64>) -> Result<f64> {
    let d = dist.dim();
    if theta.len() != d {
        return Err(invalid(format!(
            "theta has {} entries, distribution has {}",
            theta.len(),
            d
        )));
    }
    let chol = dist
        .cov
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance)?;
    let log_det: f64 = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    if !log_det.is_finite() {
        return Err(Error::SingularCovariance);
    }
    let diff = theta - &dist.mean;
    let quad = diff.dot(&chol.solve(&diff));
    Ok(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
}

/// Monte Carlo estimate of the 32x32 weight block of the template:
/// leg 1's eight weights are drawn i.i.d. standard normal, every other leg
/// is `S^(o_j - o_1)` applied to them, and the estimate is the average of
/// `w_all w_all^T`.
///
/// Each entry of `w_all` is an entry of `w_1`, so the average is read off
/// the 8x8 second moment of `w_1` through the index map that the shift
/// induces; this is the same sum without the 32x32 outer product per draw.
pub fn sample_estimate_template(gait: &GaitSpec, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    // source[a] = index into w_1 that lands at position a of w_all.
    let mut source = Vec::with_capacity(WEIGHT_DIM);
    for leg in 0..NUM_LEGS {
        let k = gait.relative_shift(leg, 0);
        for joint in 0..2 {
            let idx: Vec<f64> = (0..QUARTERS)
                .map(|i| (joint * QUARTERS + i) as f64)
                .collect();
            source.extend(cyclic_shift(&idx, k).into_iter().map(|v| v as usize));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut moment = [[0.0f64; LEG_WEIGHTS]; LEG_WEIGHTS];
    let mut w = [0.0f64; LEG_WEIGHTS];
    for _ in 0..n {
        for v in w.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for r in 0..LEG_WEIGHTS {
            for c in r..LEG_WEIGHTS {
                moment[r][c] += w[r] * w[c];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    Ok(DMatrix::from_fn(WEIGHT_DIM, WEIGHT_DIM, |a, b| {
        let (r, c) = (source[a].min(source[b]), source[a].max(source[b]));
        moment[r][c] * inv_n
    }))
}

/// The eight weights of `leg` inside a flattened parameter vector.
pub fn leg_weights(theta: &[f64], leg: usize) -> &[f64] {
    &theta[leg * LEG_WEIGHTS..(leg + 1) * LEG_WEIGHTS]
}
