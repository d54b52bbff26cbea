//! Nonlinear rigid-body quadrotor plant.
//!
//! State is `(R, v, p, ω)` with `v`, `p` in the world frame and `ω` in the
//! body frame. Translational drag is `−(1/m) R D Rᵀ v` with `D` diagonal.
//!
//! Two actuation modes are supported. In [`PlantMode::Kinematic`] the body
//! rate follows the commanded rate through a first-order lag, standing in for
//! an onboard rate loop. In [`PlantMode::Torque`] the full Euler rigid-body
//! equation is integrated and a proportional rate loop converts the
//! commanded rate into a torque.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lie::{exp_so3, Rotation};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsError {
    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("inertia must be symmetric positive definite")]
    InertiaNotSpd,
    #[error("translational drag coefficients must be nonnegative, got {0:?}")]
    NegativeDrag([f64; 3]),
    #[error("gravity must be positive, got {0}")]
    NonPositiveGravity(f64),
    #[error("rate-loop time constant must be nonnegative, got {0}")]
    NegativeTimeConstant(f64),
}

/// Physical parameters of the vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadParams {
    /// kg
    pub mass: f64,
    /// Second moment of mass, kg·m², rows.
    pub inertia: [[f64; 3]; 3],
    /// Diagonal of the rotor-drag matrix `D`, N·s/m.
    pub drag: [f64; 3],
    /// Rotational drag from body velocity (`E`).
    #[serde(default = "zero_rows")]
    pub drag_e: [[f64; 3]; 3],
    /// Rotational drag from body rate (`F`).
    #[serde(default = "zero_rows")]
    pub drag_f: [[f64; 3]; 3],
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn zero_rows() -> [[f64; 3]; 3] {
    [[0.0; 3]; 3]
}

fn default_gravity() -> f64 {
    GRAVITY
}

fn rows_to_matrix(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

impl Default for QuadParams {
    /// 1 kg vehicle with `J = diag(0.01, 0.01, 0.02)` and `D = diag(0.3, 0.3, 0.1)`.
    fn default() -> Self {
        Self {
            mass: 1.0,
            inertia: [[0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.02]],
            drag: [0.3, 0.3, 0.1],
            drag_e: zero_rows(),
            drag_f: zero_rows(),
            gravity: GRAVITY,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if !(self.mass > 0.0) {
            return Err(ParamsError::NonPositiveMass(self.mass));
        }
        if !(self.gravity > 0.0) {
            return Err(ParamsError::NonPositiveGravity(self.gravity));
        }
        let j = self.inertia_matrix();
        if (j - j.transpose()).amax() > 1e-12 || j.cholesky().is_none() {
            return Err(ParamsError::InertiaNotSpd);
        }
        if self.drag.iter().any(|d| !(*d >= 0.0)) {
            return Err(ParamsError::NegativeDrag(self.drag));
        }
        Ok(())
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        rows_to_matrix(&self.inertia)
    }

    pub fn drag_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.drag))
    }

    pub fn drag_e_matrix(&self) -> Matrix3<f64> {
        rows_to_matrix(&self.drag_e)
    }

    pub fn drag_f_matrix(&self) -> Matrix3<f64> {
        rows_to_matrix(&self.drag_f)
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    /// Same vehicle with all drag terms removed.
    pub fn without_drag(&self) -> Self {
        Self {
            drag: [0.0; 3],
            drag_e: zero_rows(),
            drag_f: zero_rows(),
            ..self.clone()
        }
    }
}

/// How the commanded body rate reaches the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantMode {
    /// `ω̇ = (ω_cmd − ω)/τ`. A zero time constant makes the rate follow the
    /// command instantly.
    Kinematic { tau_omega: f64 },
    /// Full rigid-body rotational dynamics driven by a proportional rate loop
    /// with per-axis bandwidth `rate_gain` (1/s).
    Torque { rate_gain: [f64; 3] },
}

impl Default for PlantMode {
    fn default() -> Self {
        PlantMode::Kinematic { tau_omega: 0.05 }
    }
}

impl PlantMode {
    pub fn validate(&self) -> Result<(), ParamsError> {
        match *self {
            PlantMode::Kinematic { tau_omega } if !(tau_omega >= 0.0) => {
                Err(ParamsError::NegativeTimeConstant(tau_omega))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadState {
    /// Body-to-world attitude.
    pub rot: Rotation,
    /// World-frame velocity, m/s.
    pub vel: Vector3<f64>,
    /// World-frame position, m.
    pub pos: Vector3<f64>,
    /// Body-frame angular velocity, rad/s.
    pub omega: Vector3<f64>,
}

impl QuadState {
    pub fn at_rest(pos: Vector3<f64>) -> Self {
        Self {
            pos,
            ..Self::default()
        }
    }
}

/// Collective thrust and commanded body rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// N, nonnegative.
    pub thrust: f64,
    /// rad/s, body frame.
    pub omega_cmd: Vector3<f64>,
}

impl ControlInput {
    pub fn new(thrust: f64, omega_cmd: Vector3<f64>) -> Self {
        Self { thrust, omega_cmd }
    }

    /// Thrust clamped at zero; the rotors cannot pull.
    pub fn saturated(self) -> Self {
        Self {
            thrust: self.thrust.max(0.0),
            ..self
        }
    }
}

/// Time derivative of a [`QuadState`]. The attitude derivative is carried as
/// the body rate, `Ṙ = R ω^`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub body_rate: Vector3<f64>,
    pub vel_dot: Vector3<f64>,
    pub pos_dot: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
}

fn translational_acceleration(s: &QuadState, thrust: f64, params: &QuadParams) -> Vector3<f64> {
    let r = s.rot.matrix();
    let v_body = r.transpose() * s.vel;
    let drag = r * (params.drag_matrix() * v_body);
    Vector3::new(0.0, 0.0, -params.gravity) + s.rot.z_axis() * (thrust / params.mass)
        - drag / params.mass
}

/// Equations of motion with an explicit body torque `τ`:
/// `ω̇ = J⁻¹(τ − ω × Jω − E v_b − F ω)`.
pub fn state_derivative_with_torque(
    s: &QuadState,
    thrust: f64,
    torque: &Vector3<f64>,
    params: &QuadParams,
) -> StateDerivative {
    let j = params.inertia_matrix();
    let v_body = s.rot.matrix().transpose() * s.vel;
    let rhs = torque
        - s.omega.cross(&(j * s.omega))
        - params.drag_e_matrix() * v_body
        - params.drag_f_matrix() * s.omega;
    let omega_dot = j.cholesky().expect("inertia validated SPD").solve(&rhs);
    StateDerivative {
        body_rate: s.omega,
        vel_dot: translational_acceleration(s, thrust, params),
        pos_dot: s.vel,
        omega_dot,
    }
}

/// Time derivative of the state under input `u`.
pub fn state_derivative(
    s: &QuadState,
    u: &ControlInput,
    params: &QuadParams,
    mode: &PlantMode,
) -> StateDerivative {
    match *mode {
        PlantMode::Kinematic { tau_omega } => StateDerivative {
            body_rate: s.omega,
            vel_dot: translational_acceleration(s, u.thrust, params),
            pos_dot: s.vel,
            omega_dot: if tau_omega > 0.0 {
                (u.omega_cmd - s.omega) / tau_omega
            } else {
                Vector3::zeros()
            },
        },
        PlantMode::Torque { rate_gain } => {
            let j = params.inertia_matrix();
            let rate_err = (u.omega_cmd - s.omega).component_mul(&Vector3::from(rate_gain));
            let torque = j * rate_err + s.omega.cross(&(j * s.omega));
            state_derivative_with_torque(s, u.thrust, &torque, params)
        }
    }
}

fn advance(s: &QuadState, d: &StateDerivative, h: f64) -> QuadState {
    QuadState {
        rot: s.rot.compose(&exp_so3(&(d.body_rate * h))),
        vel: s.vel + d.vel_dot * h,
        pos: s.pos + d.pos_dot * h,
        omega: s.omega + d.omega_dot * h,
    }
}

/// One RK4 step of length `dt`. The attitude is updated multiplicatively,
/// `R ← R exp(ω̄ dt)`, so it never leaves SO(3).
pub fn step(
    s: &QuadState,
    u: &ControlInput,
    params: &QuadParams,
    mode: &PlantMode,
    dt: f64,
) -> QuadState {
    assert!(dt > 0.0, "step requires dt > 0");
    let mut s0 = *s;
    if let PlantMode::Kinematic { tau_omega } = *mode {
        if tau_omega == 0.0 {
            s0.omega = u.omega_cmd;
        }
    }
    let k1 = state_derivative(&s0, u, params, mode);
    let k2 = state_derivative(&advance(&s0, &k1, 0.5 * dt), u, params, mode);
    let k3 = state_derivative(&advance(&s0, &k2, 0.5 * dt), u, params, mode);
    let k4 = state_derivative(&advance(&s0, &k3, dt), u, params, mode);
    let avg = StateDerivative {
        body_rate: (k1.body_rate + 2.0 * k2.body_rate + 2.0 * k3.body_rate + k4.body_rate) / 6.0,
        vel_dot: (k1.vel_dot + 2.0 * k2.vel_dot + 2.0 * k3.vel_dot + k4.vel_dot) / 6.0,
        pos_dot: (k1.pos_dot + 2.0 * k2.pos_dot + 2.0 * k3.pos_dot + k4.pos_dot) / 6.0,
        omega_dot: (k1.omega_dot + 2.0 * k2.omega_dot + 2.0 * k3.omega_dot + k4.omega_dot) / 6.0,
    };
    advance(&s0, &avg, dt)
}

/// Convenience wrapper bundling parameters and actuation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub params: QuadParams,
    pub mode: PlantMode,
}

impl Plant {
    pub fn new(params: QuadParams, mode: PlantMode) -> Result<Self, ParamsError> {
        params.validate()?;
        mode.validate()?;
        Ok(Self { params, mode })
    }

    pub fn step(&self, s: &QuadState, u: &ControlInput, dt: f64) -> QuadState {
        step(s, u, &self.params, &self.mode, dt)
    }
}
