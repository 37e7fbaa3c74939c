//! Open-loop central pattern generator built from cyclic von Mises bases.
//!
//! Each joint trajectory is `q_j(t) = b(z)^T w_j` with `z = delta_z * t` and
//! `b_i(z) = exp(cos(2 pi (z - c_i)) / h)`. Centers are equidistant on the
//! unit cycle, so with four bases a cyclic shift of a joint's weights delays
//! its trajectory by exactly a quarter cycle (see [`cyclic_shift`]).

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::NUM_JOINTS;

/// Cyclic basis layout: `count` equidistant centers `c_i = i / count` and a
/// shared width `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub count: usize,
    pub width: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            count: 4,
            width: 1.0,
        }
    }
}

impl BasisConfig {
    pub fn new(count: usize, width: f64) -> Result<Self> {
        let cfg = Self { count, width };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(invalid("basis count must be positive"));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(invalid(format!(
                "basis width must be positive, got {}",
                self.width
            )));
        }
        Ok(())
    }

    pub fn center(&self, i: usize) -> f64 {
        i as f64 / self.count as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.center(i)).collect()
    }

    /// Length of the flattened parameter vector: all joint weights plus the
    /// temporal scale.
    pub fn param_dim(&self) -> usize {
        NUM_JOINTS * self.count + 1
    }
}

/// Policy parameters: per-joint basis weights and the temporal scale
/// `delta_z` in cycles per second.
///
/// Weights are stored joint-major in the fixed flattening order
/// `[leg1-hip, leg1-knee, leg2-hip, ..., leg4-knee]`, each block holding
/// `count` weights, followed by `delta_z` when flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    weights: Vec<f64>,
    count: usize,
    temporal_scale: f64,
}

impl PolicyParams {
    pub fn new(weights: Vec<f64>, count: usize, temporal_scale: f64) -> Result<Self> {
        if count == 0 || weights.len() != NUM_JOINTS * count {
            return Err(invalid(format!(
                "expected {} weights for {} joints x {} bases, got {}",
                NUM_JOINTS * count,
                NUM_JOINTS,
                count,
                weights.len()
            )));
        }
        if !(temporal_scale > 0.0 && temporal_scale.is_finite()) {
            return Err(invalid(format!(
                "temporal scale must be positive, got {temporal_scale}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weights must be finite"));
        }
        Ok(Self {
            weights,
            count,
            temporal_scale,
        })
    }

    pub fn zeros(count: usize, temporal_scale: f64) -> Result<Self> {
        Self::new(vec![0.0; NUM_JOINTS * count], count, temporal_scale)
    }

    /// Inverse of [`PolicyParams::to_flat`].
    pub fn from_flat(theta: &[f64], count: usize) -> Result<Self> {
        let n = NUM_JOINTS * count;
        if theta.len() != n + 1 {
            return Err(invalid(format!(
                "flat parameter vector must have {} entries, got {}",
                n + 1,
                theta.len()
            )));
        }
        Self::new(theta[..n].to_vec(), count, theta[n])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.temporal_scale);
        v
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn temporal_scale(&self) -> f64 {
        self.temporal_scale
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn joint_weights(&self, joint: usize) -> &[f64] {
        &self.weights[joint * self.count..(joint + 1) * self.count]
    }

    pub fn joint_weights_mut(&mut self, joint: usize) -> &mut [f64] {
        &mut self.weights[joint * self.count..(joint + 1) * self.count]
    }
}

/// Desired joint positions and velocities for one control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTrajectoryPoint {
    pub q_des: [f64; NUM_JOINTS],
    pub qdot_des: [f64; NUM_JOINTS],
}

/// Unwrapped phase `z = delta_z * t`.
pub fn phase(t: f64, delta_z: f64) -> Result<f64> {
    if !(delta_z > 0.0 && delta_z.is_finite()) {
        return Err(invalid(format!(
            "temporal scale must be positive, got {delta_z}"
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("time must be non-negative, got {t}")));
    }
    Ok(delta_z * t)
}

fn basis_value(z: f64, center: f64, width: f64) -> f64 {
    ((TAU * (z - center)).cos() / width).exp()
}

/// Basis activations at phase `z`; every entry lies in
/// `[exp(-1/h), exp(1/h)]`.
pub fn evaluate_basis(z: f64, cfg: &BasisConfig) -> Vec<f64> {
    (0..cfg.count)
        .map(|i| basis_value(z, cfg.center(i), cfg.width))
        .collect()
}

/// Joint trajectory at an explicit phase. Used by [`evaluate_trajectory`]
/// and by callers that need phases outside `z >= 0`.
pub fn trajectory_at_phase(params: &PolicyParams, cfg: &BasisConfig, z: f64) -> [f64; NUM_JOINTS] {
    debug_assert_eq!(params.count, cfg.count);
    let b = evaluate_basis(z, cfg);
    let mut q = [0.0; NUM_JOINTS];
    for (j, qj) in q.iter_mut().enumerate() {
        *qj = params
            .joint_weights(j)
            .iter()
            .zip(&b)
            .map(|(w, bi)| w * bi)
            .sum();
    }
    q
}

pub fn evaluate_trajectory(
    params: &PolicyParams,
    cfg: &BasisConfig,
    t: f64,
) -> Result<[f64; NUM_JOINTS]> {
    if params.count != cfg.count {
        return Err(invalid(format!(
            "params carry {} bases per joint, basis config has {}",
            params.count, cfg.count
        )));
    }
    let z = phase(t, params.temporal_scale)?;
    Ok(trajectory_at_phase(params, cfg, z))
}

/// Forward-difference velocity `(q(t + dt) - q(t)) / dt`.
pub fn desired_velocities(
    params: &PolicyParams,
    cfg: &BasisConfig,
    t: f64,
    dt: f64,
) -> Result<[f64; NUM_JOINTS]> {
    Ok(trajectory_point(params, cfg, t, dt)?.qdot_des)
}

pub fn trajectory_point(
    params: &PolicyParams,
    cfg: &BasisConfig,
    t: f64,
    dt: f64,
) -> Result<JointTrajectoryPoint> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let q_des = evaluate_trajectory(params, cfg, t)?;
    let q_next = evaluate_trajectory(params, cfg, t + dt)?;
    let mut qdot_des = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        qdot_des[j] = (q_next[j] - q_des[j]) / dt;
    }
    Ok(JointTrajectoryPoint { q_des, qdot_des })
}

/// Cyclic shift `(S^k w)_i = w_{(i - k) mod n}`.
///
/// With equidistant centers, shifting a joint's weights by `k` delays its
/// trajectory by `k / n` of a cycle:
/// `traj(S^k w, z) == traj(w, z - k / n)`.
pub fn cyclic_shift(w: &[f64], k: usize) -> Vec<f64> {
    let n = w.len();
    (0..n).map(|i| w[(i + n - k % n) % n]).collect()
}
