//! Deterministic surrogate quadruped.
//!
//! The model is deliberately small:
//!
//! - eight joints with second-order dynamics `qdd = (u - damping * qdot) / inertia`,
//!   integrated with semi-implicit Euler and clamped at joint limits;
//! - planar two-link legs swinging in the sagittal plane, mounted at the
//!   trunk corners; joint angles are measured from the standing posture, so
//!   `q = 0` is the standing pose;
//! - a spring-damper ground carrying the trunk height, with a foot in
//!   contact when its world height is `<= 0`;
//! - no-slip trunk transport: the trunk moves opposite to the mean stance
//!   foot velocity and yaws by the least-squares rotation they imply;
//! - a static-stability tipping heuristic: while the projected centre of
//!   mass stays outside the stance-foot support polygon for longer than
//!   `tip_window` frames, the trunk pitches/rolls toward that deficit.
//!
//! Legs are ordered front-right, hind-left, front-left, hind-right. The
//! body frame has `+x` to the right and `+y` forward. Left/right mirroring
//! maps legs `0 <-> 2` and `1 <-> 3`; every reduction over legs is grouped
//! as `(FR + FL) + (HL + HR)` so mirrored rollouts are mirrored bit for bit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::{joint_torques, GainConfig, JointState};
use crate::error::{invalid, Result};
use crate::policy::{trajectory_point, BasisConfig, PolicyParams};
use crate::{NUM_JOINTS, NUM_LEGS};

/// Lateral (`x`) and longitudinal (`y`) sign of each hip mount.
const LEG_SIGNS: [(f64, f64); NUM_LEGS] = [(1.0, 1.0), (-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub episode_frames: usize,
    pub upper_leg: f64,
    pub lower_leg: f64,
    /// Half extents of the hip rectangle (x, y).
    pub half_width: f64,
    pub half_length: f64,
    /// Absolute hip and knee angles of the standing posture.
    pub stand_hip: f64,
    pub stand_knee: f64,
    /// Limits relative to the standing posture, per joint.
    pub joint_lower: [f64; NUM_JOINTS],
    pub joint_upper: [f64; NUM_JOINTS],
    pub joint_inertia: f64,
    pub joint_damping: f64,
    pub gravity: f64,
    /// Per-foot ground stiffness and damping, per unit trunk mass.
    pub ground_stiffness: f64,
    pub ground_damping: f64,
    pub support_margin: f64,
    pub tip_window: usize,
    pub tip_gain: f64,
    pub tilt_restore_rate: f64,
    pub fall_pitch_roll_limit: f64,
    pub fall_height_min: f64,
    pub k_ctrl: f64,
    pub k_ct: f64,
    pub c_fall_value: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let hip = (-0.6, 0.6);
        let knee = (-0.8, 0.8);
        let mut lower = [0.0; NUM_JOINTS];
        let mut upper = [0.0; NUM_JOINTS];
        for leg in 0..NUM_LEGS {
            lower[2 * leg] = hip.0;
            upper[2 * leg] = hip.1;
            lower[2 * leg + 1] = knee.0;
            upper[2 * leg + 1] = knee.1;
        }
        Self {
            dt: 0.01,
            episode_frames: 200,
            upper_leg: 0.15,
            lower_leg: 0.15,
            half_width: 0.12,
            half_length: 0.20,
            stand_hip: 0.5,
            stand_knee: -1.0,
            joint_lower: lower,
            joint_upper: upper,
            joint_inertia: 0.02,
            joint_damping: 0.1,
            gravity: 9.81,
            ground_stiffness: 225.0,
            ground_damping: 7.5,
            support_margin: 0.02,
            tip_window: 5,
            tip_gain: 150.0,
            tilt_restore_rate: 5.0,
            fall_pitch_roll_limit: 0.5,
            fall_height_min: 0.15,
            k_ctrl: 0.05,
            k_ct: 0.01,
            c_fall_value: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if self.episode_frames == 0 {
            return Err(invalid("episode_frames must be positive"));
        }
        for j in 0..NUM_JOINTS {
            let (lo, hi) = (self.joint_lower[j], self.joint_upper[j]);
            if !(lo <= 0.0 && 0.0 <= hi) {
                return Err(invalid(format!(
                    "joint {j} limits [{lo}, {hi}] must be ordered and contain the standing pose"
                )));
            }
        }
        let positive = [
            ("upper_leg", self.upper_leg),
            ("lower_leg", self.lower_leg),
            ("half_width", self.half_width),
            ("half_length", self.half_length),
            ("joint_inertia", self.joint_inertia),
            ("gravity", self.gravity),
            ("ground_stiffness", self.ground_stiffness),
            ("fall_pitch_roll_limit", self.fall_pitch_roll_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("joint_damping", self.joint_damping),
            ("ground_damping", self.ground_damping),
            ("support_margin", self.support_margin),
            ("tip_gain", self.tip_gain),
            ("tilt_restore_rate", self.tilt_restore_rate),
            ("k_ctrl", self.k_ctrl),
            ("k_ct", self.k_ct),
            ("c_fall_value", self.c_fall_value),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Episode duration `T = dt * episode_frames`.
    pub fn duration(&self) -> f64 {
        self.dt * self.episode_frames as f64
    }

    /// Trunk height at rest on four feet in the standing pose.
    pub fn standing_height(&self) -> f64 {
        let reach = -self.foot_offset(0, &[0.0; NUM_JOINTS]).2;
        reach - self.gravity / (NUM_LEGS as f64 * self.ground_stiffness)
    }

    /// Foot position of `leg` in the body frame: `(x, y, z)` relative to the
    /// trunk centre, with `z` relative to the hip plane.
    fn foot_offset(&self, leg: usize, q: &[f64; NUM_JOINTS]) -> (f64, f64, f64) {
        let a1 = self.stand_hip + q[2 * leg];
        let a2 = a1 + self.stand_knee + q[2 * leg + 1];
        let (s1, c1) = a1.sin_cos();
        let (s2, c2) = a2.sin_cos();
        let (sx, sy) = LEG_SIGNS[leg];
        (
            sx * self.half_width,
            sy * self.half_length + self.upper_leg * s1 + self.lower_leg * s2,
            -self.upper_leg * c1 - self.lower_leg * c2,
        )
    }
}

/// Mirror-exact reduction over legs.
fn leg_sum(v: [f64; NUM_LEGS]) -> f64 {
    (v[0] + v[2]) + (v[1] + v[3])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub height: f64,
    pub height_rate: f64,
    pub pitch: f64,
    pub roll: f64,
    pub pitch_rate: f64,
    pub roll_rate: f64,
    pub joints: JointState,
    pub contact: [bool; NUM_LEGS],
    /// World height of each foot, kept for touchdown speeds.
    pub foot_height: [f64; NUM_LEGS],
    pub unstable_frames: usize,
    pub cost_ctrl: f64,
    pub cost_contact: f64,
    pub fallen: bool,
    pub time: f64,
    pub frame: usize,
}

impl SimState {
    fn foot_world_height(&self, foot: (f64, f64, f64)) -> f64 {
        let (fx, fy, fz) = foot;
        self.height + fz - (fx * self.roll.sin() + fy * self.pitch.sin())
    }
}

/// Canonical standing state: four feet on the ground at spring equilibrium,
/// level trunk, zero velocities.
pub fn reset(cfg: &SimConfig) -> SimState {
    let mut s = SimState {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
        height: cfg.standing_height(),
        height_rate: 0.0,
        pitch: 0.0,
        roll: 0.0,
        pitch_rate: 0.0,
        roll_rate: 0.0,
        joints: JointState::default(),
        contact: [true; NUM_LEGS],
        foot_height: [0.0; NUM_LEGS],
        unstable_frames: 0,
        cost_ctrl: 0.0,
        cost_contact: 0.0,
        fallen: false,
        time: 0.0,
        frame: 0,
    };
    for leg in 0..NUM_LEGS {
        let foot = cfg.foot_offset(leg, &s.joints.q);
        s.foot_height[leg] = s.foot_world_height(foot);
        s.contact[leg] = s.foot_height[leg] <= 0.0;
    }
    s
}

fn segment_nearest(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    // Midpoint form: symmetric in (a, b) and under x -> -x.
    let m = ((a.0 + b.0) * 0.5, (a.1 + b.1) * 0.5);
    let h = ((b.0 - a.0) * 0.5, (b.1 - a.1) * 0.5);
    let hh = h.0 * h.0 + h.1 * h.1;
    if hh == 0.0 {
        return m;
    }
    let s = (-(m.0 * h.0 + m.1 * h.1) / hh).clamp(-1.0, 1.0);
    (m.0 + s * h.0, m.1 + s * h.1)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn triangle_contains_origin(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    if cross(a, b, c).abs() < 1e-12 {
        return false;
    }
    let o = (0.0, 0.0);
    let d1 = cross(a, b, o);
    let d2 = cross(b, c, o);
    let d3 = cross(c, a, o);
    (d1 >= 0.0 && d2 >= 0.0 && d3 >= 0.0) || (d1 <= 0.0 && d2 <= 0.0 && d3 <= 0.0)
}

/// Vector from the nearest point of the support polygon to the projected
/// centre of mass (the body origin). Zero when the origin is supported;
/// `None` when nothing is in contact.
pub fn support_deficit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let nearest = match points.len() {
        0 => return None,
        1 => points[0],
        n => {
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        if triangle_contains_origin(points[i], points[j], points[k]) {
                            return Some((0.0, 0.0));
                        }
                    }
                }
            }
            let mut best = segment_nearest(points[0], points[1]);
            let mut best_d = best.0 * best.0 + best.1 * best.1;
            for i in 0..n {
                for j in i + 1..n {
                    let p = segment_nearest(points[i], points[j]);
                    let d = p.0 * p.0 + p.1 * p.1;
                    if d < best_d {
                        best = p;
                        best_d = d;
                    }
                }
            }
            best
        }
    };
    Some((-nearest.0, -nearest.1))
}

/// Advance one frame under `torques`. A fallen state only advances time.
pub fn step(state: &SimState, torques: &[f64; NUM_JOINTS], cfg: &SimConfig) -> Result<SimState> {
    if torques.iter().any(|u| !u.is_finite()) {
        return Err(invalid("torques must be finite"));
    }
    let dt = cfg.dt;
    let mut s = state.clone();
    s.time += dt;
    s.frame += 1;
    if state.fallen {
        return Ok(s);
    }

    // Joints.
    for (j, &u) in torques.iter().enumerate() {
        let qdd = (u - cfg.joint_damping * s.joints.qdot[j]) / cfg.joint_inertia;
        s.joints.qdot[j] += qdd * dt;
        s.joints.q[j] += s.joints.qdot[j] * dt;
        if s.joints.q[j] < cfg.joint_lower[j] {
            s.joints.q[j] = cfg.joint_lower[j];
            s.joints.qdot[j] = s.joints.qdot[j].max(0.0);
        } else if s.joints.q[j] > cfg.joint_upper[j] {
            s.joints.q[j] = cfg.joint_upper[j];
            s.joints.qdot[j] = s.joints.qdot[j].min(0.0);
        }
    }
    let mut u_sq = [0.0; NUM_LEGS];
    for (leg, v) in u_sq.iter_mut().enumerate() {
        *v = torques[2 * leg] * torques[2 * leg] + torques[2 * leg + 1] * torques[2 * leg + 1];
    }
    s.cost_ctrl += cfg.k_ctrl * leg_sum(u_sq) * dt;

    let old_feet: [(f64, f64, f64); NUM_LEGS] =
        std::array::from_fn(|leg| cfg.foot_offset(leg, &state.joints.q));
    let feet: [(f64, f64, f64); NUM_LEGS] =
        std::array::from_fn(|leg| cfg.foot_offset(leg, &s.joints.q));

    // Trunk height on the spring-damper ground.
    let mut force = [0.0; NUM_LEGS];
    for leg in 0..NUM_LEGS {
        let pen = -s.foot_world_height(feet[leg]);
        if pen > 0.0 {
            force[leg] = (cfg.ground_stiffness * pen - cfg.ground_damping * s.height_rate).max(0.0);
        }
    }
    s.height_rate += (leg_sum(force) - cfg.gravity) * dt;
    s.height += s.height_rate * dt;

    // Contacts and touchdown costs.
    let mut impact = [0.0; NUM_LEGS];
    for leg in 0..NUM_LEGS {
        let h = s.foot_world_height(feet[leg]);
        let touching = h <= 0.0;
        if touching && !state.contact[leg] {
            let speed = (h - state.foot_height[leg]) / dt;
            impact[leg] = cfg.k_ct * speed * speed;
        }
        s.contact[leg] = touching;
        s.foot_height[leg] = h;
    }
    s.cost_contact += leg_sum(impact);

    // No-slip planar transport from stance feet.
    let mut vx = [0.0; NUM_LEGS];
    let mut vy = [0.0; NUM_LEGS];
    let mut moment = [0.0; NUM_LEGS];
    let mut radius_sq = [0.0; NUM_LEGS];
    let mut stance = [0.0; NUM_LEGS];
    let mut support = Vec::with_capacity(NUM_LEGS);
    for leg in 0..NUM_LEGS {
        if !s.contact[leg] {
            continue;
        }
        let (fx, fy, _) = feet[leg];
        let vfx = (fx - old_feet[leg].0) / dt;
        let vfy = (fy - old_feet[leg].1) / dt;
        vx[leg] = vfx;
        vy[leg] = vfy;
        moment[leg] = fx * vfy - fy * vfx;
        radius_sq[leg] = fx * fx + fy * fy;
        stance[leg] = 1.0;
        support.push((fx, fy));
    }
    let n_stance = leg_sum(stance);
    if n_stance > 0.0 {
        let bvx = -leg_sum(vx) / n_stance;
        let bvy = -leg_sum(vy) / n_stance;
        let yaw_rate = -leg_sum(moment) / leg_sum(radius_sq);
        let (sh, ch) = s.heading.sin_cos();
        s.x += (ch * bvx - sh * bvy) * dt;
        s.y += (sh * bvx + ch * bvy) * dt;
        s.heading += yaw_rate * dt;
    }

    // Static-stability tipping.
    let deficit = support_deficit(&support);
    let unstable = match deficit {
        None => true,
        Some((dx, dy)) => (dx * dx + dy * dy).sqrt() > cfg.support_margin,
    };
    if unstable {
        s.unstable_frames += 1;
        if s.unstable_frames > cfg.tip_window {
            if let Some((dx, dy)) = deficit {
                s.roll_rate += cfg.tip_gain * dx * dt;
                s.pitch_rate += cfg.tip_gain * dy * dt;
            }
            s.roll += s.roll_rate * dt;
            s.pitch += s.pitch_rate * dt;
        }
    } else {
        s.unstable_frames = 0;
        s.roll_rate = 0.0;
        s.pitch_rate = 0.0;
        let decay = (1.0 - cfg.tilt_restore_rate * dt).max(0.0);
        s.roll *= decay;
        s.pitch *= decay;
    }

    if s.pitch.abs() > cfg.fall_pitch_roll_limit
        || s.roll.abs() > cfg.fall_pitch_roll_limit
        || s.height < cfg.fall_height_min
    {
        s.fallen = true;
    }
    Ok(s)
}

/// Episode reward: `(sign(y) sqrt(x^2 + y^2) - cost_ctrl - cost_contact) / T`
/// minus the fall penalty when the robot fell. `sign(0) = 0`.
pub fn reward_from_components(
    x: f64,
    y: f64,
    cost_ctrl: f64,
    cost_contact: f64,
    fell: bool,
    duration: f64,
    c_fall_value: f64,
) -> f64 {
    let sign = if y > 0.0 {
        1.0
    } else if y < 0.0 {
        -1.0
    } else {
        0.0
    };
    let translation = sign * x.hypot(y);
    let fall = if fell { c_fall_value } else { 0.0 };
    (translation - cost_ctrl - cost_contact) / duration - fall
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFrame {
    pub frame: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub height: f64,
    pub fell: bool,
    pub q: [f64; NUM_JOINTS],
    pub q_des: [f64; NUM_JOINTS],
    pub u: [f64; NUM_JOINTS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub reward: f64,
    pub x: f64,
    pub y: f64,
    pub cost_ctrl: f64,
    pub cost_contact: f64,
    pub fell: bool,
    pub duration: f64,
    pub fall_penalty: f64,
    pub trace: Option<Vec<TraceFrame>>,
}

impl EpisodeResult {
    /// Reward recomputed from this result's own fields.
    pub fn recomputed_reward(&self) -> f64 {
        reward_from_components(
            self.x,
            self.y,
            self.cost_ctrl,
            self.cost_contact,
            self.fell,
            self.duration,
            self.fall_penalty,
        )
    }
}

pub fn rollout(
    params: &PolicyParams,
    basis: &BasisConfig,
    gains: &GainConfig,
    cfg: &SimConfig,
) -> Result<EpisodeResult> {
    run_episode(params, basis, gains, cfg, false)
}

/// Same as [`rollout`] but records every frame.
pub fn rollout_traced(
    params: &PolicyParams,
    basis: &BasisConfig,
    gains: &GainConfig,
    cfg: &SimConfig,
) -> Result<EpisodeResult> {
    run_episode(params, basis, gains, cfg, true)
}

fn run_episode(
    params: &PolicyParams,
    basis: &BasisConfig,
    gains: &GainConfig,
    cfg: &SimConfig,
    traced: bool,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    gains.validate()?;
    basis.validate()?;
    let mut state = reset(cfg);
    let mut trace = traced.then(|| Vec::with_capacity(cfg.episode_frames));
    for frame in 0..cfg.episode_frames {
        let t = frame as f64 * cfg.dt;
        let point = trajectory_point(params, basis, t, cfg.dt)?;
        let u = joint_torques(&point.q_des, &point.qdot_des, &state.joints, gains);
        state = step(&state, &u, cfg)?;
        if let Some(trace) = trace.as_mut() {
            trace.push(TraceFrame {
                frame,
                t: state.time,
                x: state.x,
                y: state.y,
                heading: state.heading,
                height: state.height,
                fell: state.fallen,
                q: state.joints.q,
                q_des: point.q_des,
                u,
            });
        }
    }
    let duration = cfg.duration();
    let reward = reward_from_components(
        state.x,
        state.y,
        state.cost_ctrl,
        state.cost_contact,
        state.fallen,
        duration,
        cfg.c_fall_value,
    );
    Ok(EpisodeResult {
        reward,
        x: state.x,
        y: state.y,
        cost_ctrl: state.cost_ctrl,
        cost_contact: state.cost_contact,
        fell: state.fallen,
        duration,
        fall_penalty: cfg.c_fall_value,
        trace,
    })
}

/// Write a per-frame trace with columns
/// `frame,t,x,y,heading,height,fell,q0..q7,u0..u7`.
pub fn write_trace_csv<W: Write>(trace: &[TraceFrame], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["frame", "t", "x", "y", "heading", "height", "fell"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..NUM_JOINTS).map(|j| format!("q{j}")));
    header.extend((0..NUM_JOINTS).map(|j| format!("u{j}")));
    w.write_record(&header)?;
    for f in trace {
        let mut row = vec![
            f.frame.to_string(),
            format!("{:?}", f.t),
            format!("{:?}", f.x),
            format!("{:?}", f.y),
            format!("{:?}", f.heading),
            format!("{:?}", f.height),
            u8::from(f.fell).to_string(),
        ];
        row.extend(f.q.iter().map(|v| format!("{v:?}")));
        row.extend(f.u.iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
