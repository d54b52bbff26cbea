//! Feedforward reference generation.
//!
//! A position-and-yaw trajectory is lifted to the full tuple
//! `(p, v, a, R, f, ω)` with the differential-flatness construction: the
//! thrust axis is aligned with `a + g z_w`, the heading is fixed by the yaw
//! angle, and the body rate follows from differentiating the resulting frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::QuadParams;
use crate::lie::{unskew, ExtendedPose, Rotation};

/// Specific thrust below this fraction of `g` is treated as infeasible.
pub const MIN_THRUST_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("trajectory spec invalid: {0}")]
    InvalidSpec(String),
    #[error("sample time {t} s outside [0, {duration}] s")]
    OutOfRange { t: f64, duration: f64 },
    #[error("flatness singularity at t = {t} s: |a + g z_w| = {specific_thrust:.4} m/s² is below {MIN_THRUST_FRACTION} g")]
    Infeasible { t: f64, specific_thrust: f64 },
    #[error("heading undefined at t = {t} s: thrust axis is parallel to the yaw direction")]
    HeadingUndefined { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    #[default]
    Circle,
    Hover,
    WaypointPolynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum YawMode {
    /// Constant heading `yaw` (rad).
    #[default]
    Fixed,
    /// Heading along the horizontal velocity.
    Tangent,
}

/// Position-and-yaw trajectory description.
///
/// Circles are traversed counter-clockwise starting at `center + (radius, 0, altitude)`.
/// `altitude` is added to `center.z` for every kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    #[serde(default)]
    pub kind: TrajectoryKind,
    #[serde(default = "one")]
    pub radius: f64,
    #[serde(default = "thirty")]
    pub period: f64,
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default = "one")]
    pub altitude: f64,
    #[serde(default)]
    pub yaw_mode: YawMode,
    #[serde(default)]
    pub yaw: f64,
    #[serde(default = "thirty")]
    pub duration: f64,
    /// Waypoints (relative to `center` + altitude) for
    /// [`TrajectoryKind::WaypointPolynomial`]; joined by rest-to-rest quintics.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<[f64; 3]>,
    /// Duration of each quintic segment, s.
    #[serde(default = "one")]
    pub segment_time: f64,
}

fn one() -> f64 {
    1.0
}

fn thirty() -> f64 {
    30.0
}

impl Default for TrajectorySpec {
    /// The 1 m radius, 30 s period circle at 1 m altitude.
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Circle,
            radius: 1.0,
            period: 30.0,
            center: [0.0; 3],
            altitude: 1.0,
            yaw_mode: YawMode::Fixed,
            yaw: 0.0,
            duration: 30.0,
            waypoints: Vec::new(),
            segment_time: 1.0,
        }
    }
}

impl TrajectorySpec {
    pub fn circle(radius: f64, period: f64, duration: f64) -> Self {
        Self {
            radius,
            period,
            duration,
            ..Self::default()
        }
    }

    pub fn hover(center: [f64; 3], duration: f64) -> Self {
        Self {
            kind: TrajectoryKind::Hover,
            center,
            altitude: 0.0,
            duration,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ReferenceError> {
        let bad = |msg: &str| Err(ReferenceError::InvalidSpec(msg.to_string()));
        if !(self.period > 0.0) {
            return bad("period must be > 0");
        }
        if !(self.radius >= 0.0) {
            return bad("radius must be >= 0");
        }
        if !(self.duration > 0.0) {
            return bad("duration must be > 0");
        }
        if self.kind == TrajectoryKind::WaypointPolynomial {
            if self.waypoints.len() < 2 {
                return bad("waypoint_polynomial needs at least two waypoints");
            }
            if !(self.segment_time > 0.0) {
                return bad("segment_time must be > 0");
            }
        }
        Ok(())
    }

    fn origin(&self) -> Vector3<f64> {
        Vector3::from(self.center) + Vector3::new(0.0, 0.0, self.altitude)
    }

    /// Position and its first three derivatives at `t`.
    fn kinematics(&self, t: f64) -> [Vector3<f64>; 4] {
        let o = self.origin();
        match self.kind {
            TrajectoryKind::Hover => [o, Vector3::zeros(), Vector3::zeros(), Vector3::zeros()],
            TrajectoryKind::Circle => {
                let w = 2.0 * std::f64::consts::PI / self.period;
                let r = self.radius;
                let (s, c) = (w * t).sin_cos();
                [
                    o + Vector3::new(r * c, r * s, 0.0),
                    Vector3::new(-r * w * s, r * w * c, 0.0),
                    Vector3::new(-r * w * w * c, -r * w * w * s, 0.0),
                    Vector3::new(r * w * w * w * s, -r * w * w * w * c, 0.0),
                ]
            }
            TrajectoryKind::WaypointPolynomial => {
                let n_seg = self.waypoints.len() - 1;
                let seg = ((t / self.segment_time).floor() as usize).min(n_seg - 1);
                let tau = ((t - seg as f64 * self.segment_time) / self.segment_time).clamp(0.0, 1.0);
                let a = Vector3::from(self.waypoints[seg]);
                let b = Vector3::from(self.waypoints[seg + 1]);
                let d = b - a;
                let big_t = self.segment_time;
                // s(τ) = 10τ³ − 15τ⁴ + 6τ⁵
                let s = tau.powi(3) * (10.0 - 15.0 * tau + 6.0 * tau * tau);
                let ds = 30.0 * tau * tau * (1.0 - tau) * (1.0 - tau) / big_t;
                let dds = 60.0 * tau * (1.0 - 3.0 * tau + 2.0 * tau * tau) / (big_t * big_t);
                let ddds = 60.0 * (1.0 - 6.0 * tau + 6.0 * tau * tau) / (big_t * big_t * big_t);
                [o + a + d * s, d * ds, d * dds, d * ddds]
            }
        }
    }

    /// Heading and its rate.
    fn heading(&self, vel: &Vector3<f64>, acc: &Vector3<f64>) -> (f64, f64) {
        match self.yaw_mode {
            YawMode::Fixed => (self.yaw, 0.0),
            YawMode::Tangent => {
                let speed2 = vel.x * vel.x + vel.y * vel.y;
                if speed2 < 1e-12 {
                    (self.yaw, 0.0)
                } else {
                    let psi = vel.y.atan2(vel.x);
                    let psi_dot = (vel.x * acc.y - vel.y * acc.x) / speed2;
                    (psi, psi_dot)
                }
            }
        }
    }
}

/// Feedforward tuple at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub t: f64,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub rot: Rotation,
    /// Collective thrust, N.
    pub thrust: f64,
    /// Body rate of the reference frame, expressed in that frame.
    pub omega: Vector3<f64>,
}

impl ReferencePoint {
    pub fn pose(&self) -> ExtendedPose {
        ExtendedPose::new(self.rot, self.vel, self.pos)
    }
}

/// Thrust-aligned frame with heading `psi` and its time derivative given
/// `ṫ` (jerk) and `ψ̇`.
fn flat_frame(
    t: f64,
    thrust_acc: &Vector3<f64>,
    thrust_acc_dot: &Vector3<f64>,
    psi: f64,
    psi_dot: f64,
) -> Result<(Matrix3<f64>, Matrix3<f64>), ReferenceError> {
    let norm = thrust_acc.norm();
    let z = thrust_acc / norm;
    let z_dot = (thrust_acc_dot - z * z.dot(thrust_acc_dot)) / norm;
    let (s, c) = psi.sin_cos();
    let xc = Vector3::new(c, s, 0.0);
    let xc_dot = Vector3::new(-s, c, 0.0) * psi_dot;
    let w = z.cross(&xc);
    let w_norm = w.norm();
    if w_norm < 1e-6 {
        return Err(ReferenceError::HeadingUndefined { t });
    }
    let y = w / w_norm;
    let w_dot = z_dot.cross(&xc) + z.cross(&xc_dot);
    let y_dot = (w_dot - y * y.dot(&w_dot)) / w_norm;
    let x = y.cross(&z);
    let x_dot = y_dot.cross(&z) + y.cross(&z_dot);
    Ok((
        Matrix3::from_columns(&[x, y, z]),
        Matrix3::from_columns(&[x_dot, y_dot, z_dot]),
    ))
}

/// Feedforward tuple at time `t` for vehicle `params`.
pub fn sample(spec: &TrajectorySpec, t: f64, params: &QuadParams) -> Result<ReferencePoint, ReferenceError> {
    spec.validate()?;
    if !(t >= -1e-12 && t <= spec.duration + 1e-9) {
        return Err(ReferenceError::OutOfRange {
            t,
            duration: spec.duration,
        });
    }
    let [pos, vel, acc, jerk] = spec.kinematics(t);
    let thrust_acc = acc + Vector3::new(0.0, 0.0, params.gravity);
    let specific_thrust = thrust_acc.norm();
    if specific_thrust < MIN_THRUST_FRACTION * params.gravity {
        return Err(ReferenceError::Infeasible { t, specific_thrust });
    }
    let (psi, psi_dot) = spec.heading(&vel, &acc);
    let (r, r_dot) = flat_frame(t, &thrust_acc, &jerk, psi, psi_dot)?;
    let body = r.transpose() * r_dot;
    let omega = unskew(&((body - body.transpose()) * 0.5));
    Ok(ReferencePoint {
        t,
        pos,
        vel,
        acc,
        rot: Rotation::from_matrix_unchecked(r).renormalized(),
        thrust: params.mass * specific_thrust,
        omega,
    })
}

/// References at `t = k·dt` for `k = 0..=floor(duration/dt)`.
pub fn table(spec: &TrajectorySpec, params: &QuadParams, dt: f64, duration: f64) -> Result<Vec<ReferencePoint>, ReferenceError> {
    if !(dt > 0.0) {
        return Err(ReferenceError::InvalidSpec(format!("dt must be > 0, got {dt}")));
    }
    if duration > spec.duration + 1e-9 {
        return Err(ReferenceError::InvalidSpec(format!(
            "requested duration {duration} s exceeds trajectory duration {} s",
            spec.duration
        )));
    }
    let n = (duration / dt + 1e-9).floor() as usize;
    (0..=n).map(|k| sample(spec, k as f64 * dt, params)).collect()
}
