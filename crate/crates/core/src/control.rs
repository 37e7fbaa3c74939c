//! PD joint control with symmetric torque saturation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::NUM_JOINTS;

/// Shared PD gains for all joints plus the actuator torque limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainConfig {
    pub kp: f64,
    pub kd: f64,
    pub u_max: f64,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            kp: 10.0,
            kd: 0.5,
            u_max: 1.0,
        }
    }
}

impl GainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp >= 0.0 && self.kd >= 0.0) || !self.kp.is_finite() || !self.kd.is_finite() {
            return Err(invalid("gains must be finite and non-negative"));
        }
        if self.kp == 0.0 && self.kd == 0.0 {
            return Err(invalid("kp and kd cannot both be zero"));
        }
        if !(self.u_max > 0.0) {
            return Err(invalid("torque limit must be positive"));
        }
        Ok(())
    }
}

/// Observed joint positions and velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    pub q: [f64; NUM_JOINTS],
    pub qdot: [f64; NUM_JOINTS],
}

/// `u = clamp(kp (q_des - q) + kd (qdot_des - qdot), -u_max, u_max)`
/// elementwise. Slices must all have the same length.
pub fn compute_torque(
    q_des: &[f64],
    qdot_des: &[f64],
    q: &[f64],
    qdot: &[f64],
    kp: f64,
    kd: f64,
    u_max: f64,
) -> Result<Vec<f64>> {
    let n = q_des.len();
    if qdot_des.len() != n || q.len() != n || qdot.len() != n {
        return Err(invalid(format!(
            "mismatched lengths: q_des {}, qdot_des {}, q {}, qdot {}",
            n,
            qdot_des.len(),
            q.len(),
            qdot.len()
        )));
    }
    if !(u_max > 0.0) {
        return Err(invalid("torque limit must be positive"));
    }
    Ok((0..n)
        .map(|j| (kp * (q_des[j] - q[j]) + kd * (qdot_des[j] - qdot[j])).clamp(-u_max, u_max))
        .collect())
}

/// Fixed-size variant used by the simulator loop.
pub fn joint_torques(
    q_des: &[f64; NUM_JOINTS],
    qdot_des: &[f64; NUM_JOINTS],
    state: &JointState,
    gains: &GainConfig,
) -> [f64; NUM_JOINTS] {
    let mut u = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let raw = gains.kp * (q_des[j] - state.q[j]) + gains.kd * (qdot_des[j] - state.qdot[j]);
        u[j] = raw.clamp(-gains.u_max, gains.u_max);
    }
    u
}
