//! Finite-horizon tracking LQR on the linearized error model, and a
//! cascaded position/attitude baseline that works directly on the state.

use nalgebra::{DMatrix, DVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlInput, QuadParams, QuadState};
use crate::error_model::{recover_input, ErrorState, LinearizedModel, INPUT_DIM};
use crate::lie::{log_so3, LieError, Rotation};
use crate::reference::{ReferencePoint, MIN_THRUST_FRACTION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("weights invalid: {0}")]
    InvalidWeights(String),
    #[error("R + BᵀPB is not positive definite at step {0}")]
    Singular(usize),
    #[error("dimension mismatch: expected state dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("gain index {index} outside schedule of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("commanded specific thrust {0:.4} m/s² is below the flatness limit")]
    Infeasible(f64),
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// Diagonal state and input weights.
///
/// State blocks are ordered `(θ, v, p, int)`; the integral block is used only
/// with an augmented model. Input weights are `diag(r_f, r_omega·I₃)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrWeights {
    pub q_theta: [f64; 3],
    pub q_v: [f64; 3],
    pub q_p: [f64; 3],
    #[serde(default = "default_q_int")]
    pub q_int: [f64; 3],
    pub r_f: f64,
    pub r_omega: f64,
}

fn default_q_int() -> [f64; 3] {
    [0.1; 3]
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            q_theta: [10.0; 3],
            q_v: [10.0; 3],
            q_p: [100.0; 3],
            q_int: default_q_int(),
            r_f: 0.05,
            r_omega: 2.5,
        }
    }
}

pub(crate) fn diag_blocks(blocks: &[&[f64; 3]]) -> DMatrix<f64> {
    let diag: Vec<f64> = blocks.iter().flat_map(|b| b.iter().copied()).collect();
    DMatrix::from_diagonal(&DVector::from_vec(diag))
}

pub(crate) fn input_weight(r_f: f64, r_omega: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(vec![r_f, r_omega, r_omega, r_omega]))
}

impl LqrWeights {
    pub fn validate(&self) -> Result<(), ControlError> {
        let all_q = self.q_theta.iter().chain(&self.q_v).chain(&self.q_p).chain(&self.q_int);
        if all_q.into_iter().any(|q| !(*q > 0.0)) {
            return Err(ControlError::InvalidWeights("state weights must be > 0".into()));
        }
        if !(self.r_f > 0.0 && self.r_omega > 0.0) {
            return Err(ControlError::InvalidWeights("input weights must be > 0".into()));
        }
        Ok(())
    }

    pub fn state_weight(&self, augmented: bool) -> DMatrix<f64> {
        if augmented {
            diag_blocks(&[&self.q_theta, &self.q_v, &self.q_p, &self.q_int])
        } else {
            diag_blocks(&[&self.q_theta, &self.q_v, &self.q_p])
        }
    }

    pub fn input_weight(&self) -> DMatrix<f64> {
        input_weight(self.r_f, self.r_omega)
    }
}

/// Time-varying feedback gains, `δu_k = −K_k δξ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub gains: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn gain(&self, k: usize) -> Result<&DMatrix<f64>, ControlError> {
        self.gains.get(k).ok_or(ControlError::IndexOutOfRange {
            index: k,
            len: self.gains.len(),
        })
    }
}

/// Backward Riccati recursion over `N = a.len()` steps with terminal cost
/// `p_terminal`. Returns the gains `K_0..K_{N-1}` and costs-to-go `P_0..P_N`.
pub fn finite_horizon_lqr(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_terminal: &DMatrix<f64>,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>), ControlError> {
    let n = a.len();
    let mut gains = vec![DMatrix::zeros(0, 0); n];
    let mut ps = vec![DMatrix::zeros(0, 0); n + 1];
    ps[n] = p_terminal.clone();
    for k in (0..n).rev() {
        let (ak, bk) = (&a[k], &b[k]);
        let p_next = &ps[k + 1];
        let bt_p = bk.transpose() * p_next;
        let s = r + &bt_p * bk;
        let chol = s.cholesky().ok_or(ControlError::Singular(k))?;
        let gain = chol.solve(&(&bt_p * ak));
        let p = q + ak.transpose() * p_next * (ak - bk * &gain);
        ps[k] = (&p + p.transpose()) * 0.5;
        gains[k] = gain;
    }
    Ok((gains, ps))
}

/// Gain schedule along the whole reference, terminal cost `P_N = Q`.
pub fn solve_lqr(model: &LinearizedModel, weights: &LqrWeights) -> Result<GainSchedule, ControlError> {
    weights.validate()?;
    let q = weights.state_weight(model.config.augmented);
    let r = weights.input_weight();
    let (gains, _) = finite_horizon_lqr(&model.a, &model.b, &q, &r, &q)?;
    Ok(GainSchedule { gains })
}

/// `δu = −K δξ`, then `f = fr − δf` and `ω = δR ωr − δω`. Returns the
/// actuation and the input error that produced it.
pub fn lqr_control(
    err: &ErrorState,
    gain: &DMatrix<f64>,
    reference: &ReferencePoint,
    delta_r: &Rotation,
) -> Result<(ControlInput, Vector4<f64>), ControlError> {
    let x = err.to_dvector();
    if gain.ncols() != x.len() || gain.nrows() != INPUT_DIM {
        return Err(ControlError::Dimension {
            expected: gain.ncols(),
            got: x.len(),
        });
    }
    let du = -(gain * x);
    let du = Vector4::new(du[0], du[1], du[2], du[3]);
    Ok((recover_input(&du, reference, delta_r), du))
}

/// Gains of the cascaded baseline. Not tuned to any particular vehicle;
/// defaults settle a 0.1 m step in about 3 s on the default airframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeGains {
    /// Position proportional gain, 1/s².
    pub kp: [f64; 3],
    /// Position integral gain, 1/s³.
    pub ki: [f64; 3],
    /// Velocity gain, 1/s.
    pub kd: [f64; 3],
    /// Attitude gain, 1/s.
    pub k_att: [f64; 3],
    /// Clamp on each component of the position-error integral, m·s.
    pub integral_limit: f64,
}

impl Default for CascadeGains {
    fn default() -> Self {
        Self {
            kp: [4.0, 4.0, 6.0],
            ki: [0.5, 0.5, 1.0],
            kd: [3.0, 3.0, 4.0],
            k_att: [8.0, 8.0, 4.0],
            integral_limit: 1.0,
        }
    }
}

impl CascadeGains {
    pub fn zero() -> Self {
        Self {
            kp: [0.0; 3],
            ki: [0.0; 3],
            kd: [0.0; 3],
            k_att: [0.0; 3],
            integral_limit: 0.0,
        }
    }
}

/// Attitude whose body z axis is `z` and whose heading is `yaw`.
pub fn attitude_from_thrust(z: &Vector3<f64>, yaw: f64) -> Option<Rotation> {
    let z = z.normalize();
    let xc = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let y = z.cross(&xc);
    let norm = y.norm();
    if norm < 1e-6 {
        return None;
    }
    let y = y / norm;
    let x = y.cross(&z);
    Some(Rotation::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[x, y, z])).renormalized())
}

/// One evaluation of the cascaded controller.
///
/// The outer loop forms a desired acceleration from position error (P and I)
/// and velocity error (D) on top of the reference acceleration; this fixes the
/// thrust magnitude and the desired attitude. The inner loop commands a body
/// rate proportional to the attitude error `log(Rᵀ R_des)` plus the reference
/// rate carried into the body frame. `integral` is the position-error
/// integral, owned by the caller.
pub fn cascade_control(
    s: &QuadState,
    reference: &ReferencePoint,
    gains: &CascadeGains,
    integral: &Vector3<f64>,
    params: &QuadParams,
) -> Result<ControlInput, ControlError> {
    let v3 = |a: [f64; 3]| Vector3::from(a);
    let acc = reference.acc
        + v3(gains.kp).component_mul(&(reference.pos - s.pos))
        + v3(gains.kd).component_mul(&(reference.vel - s.vel))
        + v3(gains.ki).component_mul(integral);
    let thrust_acc = acc + Vector3::new(0.0, 0.0, params.gravity);
    let norm = thrust_acc.norm();
    if norm < MIN_THRUST_FRACTION * params.gravity {
        return Err(ControlError::Infeasible(norm));
    }
    let heading = reference.rot.matrix().column(0);
    let yaw = heading[1].atan2(heading[0]);
    let desired = attitude_from_thrust(&thrust_acc, yaw).ok_or(ControlError::Infeasible(norm))?;
    let att_err = s.rot.transpose().compose(&desired);
    let e = log_so3(&att_err)?;
    let omega = v3(gains.k_att).component_mul(&e) + att_err.apply(&reference.omega);
    Ok(ControlInput::new(params.mass * norm, omega))
}
