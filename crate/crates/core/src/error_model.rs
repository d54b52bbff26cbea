//! Left-invariant tracking error and its linearization along a reference.
//!
//! With `X = (R, v, p)` the vehicle and `Xr` the reference, the error is
//! `δX = X⁻¹ Xr = (RᵀRr, Rᵀ(vr − v), Rᵀ(pr − p))` and the controller works
//! with `δξ = log(δX)`. The input error is
//! `δu = (fr − f, δR ωr − ω)`, which makes the attitude error a pure
//! integrator of `δω` to first order.
//!
//! Differentiating `δX` along the plant and the reference and keeping first
//! order terms gives the continuous blocks (rows/cols ordered `θ, v, p[, int]`):
//!
//! ```text
//! A = | 0      0           0     [0] |    B = | 0      I |
//!     | A_vθ   −ωr^ − D/m  0     [0] |        | e3/m   0 |
//!     | 0      I           −ωr^  [0] |        | 0      0 |
//!    [| 0      I           c1 I   0  |]      [| 0      0 |]
//!
//! A_vθ = −(fr/m) e3^ + (1/m)((D vbr)^ − D vbr^),   vbr = Rrᵀ vr
//! ```
//!
//! The drag terms are only present when the model is built with
//! `drag_in_model`. [`validate_linearization`] checks every column against
//! the nonlinear plant by finite differences.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{step, ControlInput, PlantMode, QuadParams, QuadState};
use crate::lie::{exp_se23, log_se23, skew, ExtendedPose, LieError, Rotation, TangentVector};
use crate::reference::ReferencePoint;

/// Number of inputs `(δf, δωx, δωy, δωz)`.
pub const INPUT_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("time step must be > 0, got {0}")]
    NonPositiveDt(f64),
    #[error("integral coupling c1 must be > 0 for an augmented model, got {0}")]
    NonPositiveC1(f64),
    #[error("reference table is empty")]
    EmptyReference,
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// Tracking error in the algebra, plus the optional integral state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorState {
    pub xi: TangentVector,
    pub xi_int: Option<Vector3<f64>>,
}

impl ErrorState {
    pub fn new(xi: TangentVector) -> Self {
        Self { xi, xi_int: None }
    }

    pub fn augmented(xi: TangentVector, xi_int: Vector3<f64>) -> Self {
        Self {
            xi,
            xi_int: Some(xi_int),
        }
    }

    pub fn dim(&self) -> usize {
        if self.xi_int.is_some() {
            12
        } else {
            9
        }
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        x.rows_mut(0, 9).copy_from(&self.xi.to_vector());
        if let Some(int) = self.xi_int {
            x.rows_mut(9, 3).copy_from(&int);
        }
        x
    }

    pub fn is_finite(&self) -> bool {
        self.xi.is_finite() && self.xi_int.is_none_or(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// `δX = X⁻¹ Xr`.
pub fn error_pose(x: &ExtendedPose, xr: &ExtendedPose) -> ExtendedPose {
    x.inverse().compose(xr)
}

/// `δξ = log(X⁻¹ Xr)`.
pub fn invariant_error(x: &ExtendedPose, xr: &ExtendedPose) -> Result<ErrorState, LieError> {
    Ok(ErrorState::new(log_se23(&error_pose(x, xr))?))
}

/// `(fr − f, δR ωr − ω)`.
pub fn input_error(u: &ControlInput, reference: &ReferencePoint, delta_r: &Rotation) -> Vector4<f64> {
    let dw = delta_r.apply(&reference.omega) - u.omega_cmd;
    Vector4::new(reference.thrust - u.thrust, dw.x, dw.y, dw.z)
}

/// Inverse of [`input_error`]: `f = fr − δf`, `ω = δR ωr − δω`.
pub fn recover_input(du: &Vector4<f64>, reference: &ReferencePoint, delta_r: &Rotation) -> ControlInput {
    let dw = Vector3::new(du[1], du[2], du[3]);
    ControlInput {
        thrust: reference.thrust - du[0],
        omega_cmd: delta_r.apply(&reference.omega) - dw,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// `A_k = I + A dt`, `B_k = B dt`.
    #[default]
    Euler,
    /// Zero-order hold through the matrix exponential.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub augmented: bool,
    #[serde(default = "default_c1")]
    pub c1: f64,
    pub dt: f64,
    #[serde(default)]
    pub drag_in_model: bool,
    #[serde(default)]
    pub discretization: Discretization,
}

fn default_c1() -> f64 {
    0.01
}

impl ModelConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            augmented: false,
            c1: default_c1(),
            dt,
            drag_in_model: false,
            discretization: Discretization::Euler,
        }
    }

    pub fn state_dim(&self) -> usize {
        if self.augmented {
            12
        } else {
            9
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.dt > 0.0) {
            return Err(ModelError::NonPositiveDt(self.dt));
        }
        if self.augmented && !(self.c1 > 0.0) {
            return Err(ModelError::NonPositiveC1(self.c1));
        }
        Ok(())
    }
}

/// Per-timestep discrete error dynamics `δξ_{k+1} = A_k δξ_k + B_k δu_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedModel {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub config: ModelConfig,
}

impl LinearizedModel {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim()
    }

    /// `(A_k, B_k)` with `k` clamped to the last timestep.
    pub fn at(&self, k: usize) -> (&DMatrix<f64>, &DMatrix<f64>) {
        let k = k.min(self.a.len() - 1);
        (&self.a[k], &self.b[k])
    }

    /// Writes one JSON object per line: `{"k":..,"A":[[..]],"B":[[..]]}`.
    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        for (k, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            let line = serde_json::json!({ "k": k, "A": rows(a), "B": rows(b) });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Continuous-time `(A, B)` at one reference point.
pub fn continuous_blocks(
    reference: &ReferencePoint,
    params: &QuadParams,
    cfg: &ModelConfig,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = cfg.state_dim();
    let m = params.mass;
    let e3 = Vector3::z();
    let w_hat = skew(&reference.omega);
    let mut a_vtheta = -skew(&e3) * (reference.thrust / m);
    let mut a_vv = -w_hat;
    if cfg.drag_in_model {
        let d = params.drag_matrix();
        let v_body = reference.rot.matrix().transpose() * reference.vel;
        a_vtheta += (skew(&(d * v_body)) - d * skew(&v_body)) / m;
        a_vv -= d / m;
    }

    let mut a = DMatrix::zeros(n, n);
    a.view_mut((3, 0), (3, 3)).copy_from(&a_vtheta);
    a.view_mut((3, 3), (3, 3)).copy_from(&a_vv);
    a.view_mut((6, 3), (3, 3)).copy_from(&Matrix3::identity());
    a.view_mut((6, 6), (3, 3)).copy_from(&(-w_hat));
    if cfg.augmented {
        a.view_mut((9, 3), (3, 3)).copy_from(&Matrix3::identity());
        a.view_mut((9, 6), (3, 3)).copy_from(&(Matrix3::identity() * cfg.c1));
    }

    let mut b = DMatrix::zeros(n, INPUT_DIM);
    b.view_mut((0, 1), (3, 3)).copy_from(&Matrix3::identity());
    b.view_mut((3, 0), (3, 1)).copy_from(&(e3 / m));
    (a, b)
}

fn discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64, how: Discretization) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    match how {
        Discretization::Euler => (DMatrix::identity(n, n) + a * dt, b * dt),
        Discretization::Exact => {
            let m = b.ncols();
            let mut big = DMatrix::zeros(n + m, n + m);
            big.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
            big.view_mut((0, n), (n, m)).copy_from(&(b * dt));
            let e = big.exp();
            (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
        }
    }
}

/// Discrete error dynamics along `refs`, one `(A_k, B_k)` per reference point.
pub fn linearize(refs: &[ReferencePoint], params: &QuadParams, cfg: &ModelConfig) -> Result<LinearizedModel, ModelError> {
    cfg.validate()?;
    if refs.is_empty() {
        return Err(ModelError::EmptyReference);
    }
    let (a, b) = refs
        .iter()
        .map(|r| {
            let (ac, bc) = continuous_blocks(r, params, cfg);
            discretize(&ac, &bc, cfg.dt, cfg.discretization)
        })
        .unzip();
    Ok(LinearizedModel { a, b, config: *cfg })
}

/// Vehicle state whose invariant error to `reference` is exactly `xi`, with
/// the body rate that realises `δω = 0`.
pub fn state_with_error(reference: &ReferencePoint, xi: &TangentVector) -> QuadState {
    let delta = exp_se23(xi);
    let x = reference.pose().compose(&delta.inverse());
    QuadState {
        rot: x.rot,
        vel: x.vel,
        pos: x.pos,
        omega: delta.rot.apply(&reference.omega),
    }
}

/// Nonlinear one-step propagation of the error `xi` from `refs[k]` to
/// `refs[k + 1]` under the input that realises `du`, with the rate applied
/// instantly.
pub fn propagate_error(
    reference: &ReferencePoint,
    next: &ReferencePoint,
    xi: &TangentVector,
    du: &Vector4<f64>,
    params: &QuadParams,
    dt: f64,
) -> Result<TangentVector, LieError> {
    let s = state_with_error(reference, xi);
    let delta_r = exp_se23(xi).rot;
    let u = recover_input(du, reference, &delta_r);
    let s1 = step(&s, &u, params, &PlantMode::Kinematic { tau_omega: 0.0 }, dt);
    let x1 = ExtendedPose::new(s1.rot, s1.vel, s1.pos);
    log_se23(&error_pose(&x1, &next.pose()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// `max_{k,j} ‖(ξ⁺(ε e_j) − ξ⁺(0)) − A_k ε e_j‖∞ / ε` over the 9 error directions.
    pub max_relative_residual: f64,
    /// Step index where the maximum occurred.
    pub worst_step: usize,
    /// Error direction where the maximum occurred.
    pub worst_direction: usize,
    pub steps_checked: usize,
}

/// Finite-difference check of the discrete `A_k` against the nonlinear plant.
///
/// For every checked step `k` and every error direction `e_j`, the vehicle is
/// placed at error `ε e_j` from `refs[k]`, flown for one `dt` with zero input
/// error, and the resulting error at `refs[k+1]` is compared with `A_k ε e_j`.
/// The unperturbed flight is subtracted so that reference sampling error
/// cancels. The plant uses the same drag as the model.
pub fn validate_linearization(
    refs: &[ReferencePoint],
    params: &QuadParams,
    cfg: &ModelConfig,
    eps: f64,
    stride: usize,
) -> Result<ValidationReport, ModelError> {
    let model_cfg = ModelConfig {
        augmented: false,
        ..*cfg
    };
    let model = linearize(refs, params, &model_cfg)?;
    let plant = if cfg.drag_in_model {
        params.clone()
    } else {
        params.without_drag()
    };
    let zero_du = Vector4::zeros();
    let mut report = ValidationReport {
        max_relative_residual: 0.0,
        worst_step: 0,
        worst_direction: 0,
        steps_checked: 0,
    };
    for k in (0..refs.len().saturating_sub(1)).step_by(stride.max(1)) {
        let base = propagate_error(&refs[k], &refs[k + 1], &TangentVector::zeros(), &zero_du, &plant, cfg.dt)?;
        let base = base.to_vector();
        for j in 0..9 {
            let mut x0 = crate::lie::Vector9::zeros();
            x0[j] = eps;
            let xi1 = propagate_error(&refs[k], &refs[k + 1], &TangentVector::from_vector(&x0), &zero_du, &plant, cfg.dt)?;
            let predicted = &model.a[k] * DVector::from_column_slice(x0.as_slice());
            let diff = xi1.to_vector() - base;
            let residual = (DVector::from_column_slice(diff.as_slice()) - predicted).amax() / eps;
            if residual > report.max_relative_residual {
                report.max_relative_residual = residual;
                report.worst_step = k;
                report.worst_direction = j;
            }
        }
        report.steps_checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{sample, TrajectorySpec};

    fn hover_ref() -> ReferencePoint {
        sample(&TrajectorySpec::hover([0.0, 0.0, 1.0], 10.0), 0.0, &QuadParams::default()).unwrap()
    }

    #[test]
    fn identical_poses_have_zero_error() {
        let x = exp_se23(&TangentVector::from_slice(&[0.1, 0.2, -0.3, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let e = invariant_error(&x, &x).unwrap();
        assert!(e.xi.to_vector().amax() < 1e-15);
    }

    #[test]
    fn pure_position_offset() {
        let x = ExtendedPose::identity();
        let xr = ExtendedPose::new(Rotation::identity(), Vector3::zeros(), Vector3::x());
        let e = invariant_error(&x, &xr).unwrap();
        assert_eq!(e.xi.pos, Vector3::x());
        assert_eq!(e.xi.theta, Vector3::zeros());
        assert_eq!(e.xi.vel, Vector3::zeros());
    }

    #[test]
    fn position_offset_is_expressed_in_body_frame() {
        let r = Rotation::rot_z(std::f64::consts::FRAC_PI_2);
        let x = ExtendedPose::new(r, Vector3::zeros(), Vector3::zeros());
        let xr = ExtendedPose::new(r, Vector3::zeros(), Vector3::x());
        let e = invariant_error(&x, &xr).unwrap();
        assert!((e.xi.pos - Vector3::new(0.0, -1.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn input_error_definitions() {
        let r = hover_ref();
        let u = ControlInput::new(r.thrust, r.omega);
        assert_eq!(input_error(&u, &r, &Rotation::identity()), Vector4::zeros());
        let u = ControlInput::new(r.thrust - 1.0, Vector3::zeros());
        assert_eq!(input_error(&u, &r, &Rotation::identity()), Vector4::new(1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn recover_input_roundtrip() {
        let spec = TrajectorySpec::default();
        let r = sample(&spec, 4.0, &QuadParams::default()).unwrap();
        let dr = Rotation::rot_x(0.2).compose(&Rotation::rot_z(-0.7));
        for i in 0..100 {
            let s = i as f64;
            let u = ControlInput::new(9.0 + (0.37 * s).sin(), Vector3::new((1.3 * s).cos(), 0.1 * s, -(0.2 * s).sin()));
            let back = recover_input(&input_error(&u, &r, &dr), &r, &dr);
            assert!((back.thrust - u.thrust).abs() < 1e-13);
            assert!((back.omega_cmd - u.omega_cmd).amax() < 1e-13);
        }
    }

    #[test]
    fn hover_blocks() {
        let p = QuadParams::default();
        let r = hover_ref();
        let (a, b) = continuous_blocks(&r, &p, &ModelConfig::new(0.002));
        let g = p.gravity;
        let expected_vtheta = -skew(&Vector3::z()) * g;
        assert!((a.view((3, 0), (3, 3)) - expected_vtheta).amax() < 1e-14);
        assert_eq!(a.view((0, 0), (3, 9)).amax(), 0.0);
        assert_eq!(a.view((3, 3), (3, 3)).amax(), 0.0);
        assert_eq!(a.view((6, 6), (3, 3)).amax(), 0.0);
        assert_eq!(a.view((6, 3), (3, 3)).into_owned(), DMatrix::<f64>::identity(3, 3));
        assert_eq!(b[(5, 0)], 1.0 / p.mass);
        assert_eq!(b.view((0, 1), (3, 3)).into_owned(), DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn drag_free_velocity_block_is_minus_omega_hat() {
        let p = QuadParams::default();
        let spec = TrajectorySpec {
            yaw_mode: crate::reference::YawMode::Tangent,
            ..TrajectorySpec::default()
        };
        let r = sample(&spec, 2.0, &p).unwrap();
        let (a, _) = continuous_blocks(&r, &p, &ModelConfig::new(0.002));
        assert_eq!(a.view((3, 3), (3, 3)).into_owned(), DMatrix::from_iterator(3, 3, (-skew(&r.omega)).iter().copied()));
    }

    #[test]
    fn augmented_rows() {
        let cfg = ModelConfig {
            augmented: true,
            c1: 0.01,
            ..ModelConfig::new(0.002)
        };
        let (a, b) = continuous_blocks(&hover_ref(), &QuadParams::default(), &cfg);
        assert_eq!((a.nrows(), b.nrows()), (12, 12));
        assert_eq!(a[(9, 3)], 1.0);
        assert_eq!(a[(10, 7)], 0.01);
        assert_eq!(b.rows(9, 3).amax(), 0.0);
    }

    #[test]
    fn linearize_rejects_bad_config() {
        let refs = vec![hover_ref()];
        let p = QuadParams::default();
        assert_eq!(linearize(&refs, &p, &ModelConfig::new(0.0)), Err(ModelError::NonPositiveDt(0.0)));
        let cfg = ModelConfig {
            augmented: true,
            c1: 0.0,
            ..ModelConfig::new(0.01)
        };
        assert_eq!(linearize(&refs, &p, &cfg), Err(ModelError::NonPositiveC1(0.0)));
        assert_eq!(linearize(&[], &p, &ModelConfig::new(0.01)), Err(ModelError::EmptyReference));
    }

    #[test]
    fn zero_error_is_a_fixed_point() {
        let model = linearize(&[hover_ref()], &QuadParams::default(), &ModelConfig::new(0.002)).unwrap();
        let next = &model.a[0] * DVector::zeros(9) + &model.b[0] * DVector::zeros(4);
        assert_eq!(next, DVector::zeros(9));
    }

    #[test]
    fn state_with_error_reproduces_error() {
        let r = sample(&TrajectorySpec::default(), 1.0, &QuadParams::default()).unwrap();
        let xi = TangentVector::from_slice(&[0.01, -0.02, 0.03, 0.1, 0.0, -0.1, 0.2, 0.3, -0.4]);
        let s = state_with_error(&r, &xi);
        let e = invariant_error(&ExtendedPose::new(s.rot, s.vel, s.pos), &r.pose()).unwrap();
        assert!((e.xi.to_vector() - xi.to_vector()).amax() < 1e-12);
    }

    #[test]
    fn jsonl_dump_has_one_line_per_step() {
        let model = linearize(&[hover_ref(), hover_ref()], &QuadParams::default(), &ModelConfig::new(0.002)).unwrap();
        let mut buf = Vec::new();
        model.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["A"].as_array().unwrap().len(), 9);
        assert_eq!(first["B"][0].as_array().unwrap().len(), 4);
    }
}
