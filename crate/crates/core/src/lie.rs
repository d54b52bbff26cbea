//! Matrix Lie group kernel for SO(3) and SE_2(3).
//!
//! SE_2(3) is the group of "extended poses": an attitude `R`, a velocity `v`
//! and a position `p`, embedded as the 5x5 matrix
//!
//! ```text
//! | R  v  p |
//! | 0  1  0 |
//! | 0  0  1 |
//! ```
//!
//! Tangent vectors are ordered `(xi_theta, xi_v, xi_p)`. The exponential map
//! is closed form: the rotation block is Rodrigues' formula, and the two
//! translational columns are the SO(3) left Jacobian applied independently to
//! `xi_v` and `xi_p`.

use nalgebra::{Matrix3, Matrix5, SVector, Vector3};
use thiserror::Error;

/// A 9-vector in the `(theta, v, p)` ordering.
pub type Vector9 = SVector<f64, 9>;

/// Below this rotation angle (rad) the trigonometric coefficients switch to
/// their second-order Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Rotations whose angle is within this distance of pi are rejected by the
/// logarithm.
pub const LOG_SINGULARITY_MARGIN: f64 = 1e-6;

/// Orthonormality residual above which a rotation is re-projected onto SO(3).
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

const ALGEBRA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("matrix is not in se_2(3): {0}")]
    NotInAlgebra(&'static str),
    #[error("matrix is not in SE_2(3): {0}")]
    NotInGroup(&'static str),
    #[error("rotation is not orthonormal (residual {residual:.3e}, det {det})")]
    NotOrthonormal { residual: f64, det: f64 },
    #[error("logarithm singular: rotation angle {angle} rad is within {LOG_SINGULARITY_MARGIN} of pi")]
    LogSingularity { angle: f64 },
}

/// Skew-symmetric matrix of `v`, so that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]. Reads the lower-triangular entries, no checks.
pub fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Attitude as a direction cosine matrix on SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and `det = +1` to within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, LieError> {
        let residual = orthonormality_residual(&m);
        let det = m.determinant();
        if residual > ORTHONORMALITY_TOL || (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(LieError::NotOrthonormal { residual, det });
        }
        Ok(Self(m))
    }

    /// Wraps `m` without checking. Callers guarantee `m` is on SO(3).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Nearest rotation in the Frobenius sense (polar decomposition).
    pub fn project(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u requested");
        let v_t = svd.v_t.expect("svd v_t requested");
        let d = (u * v_t).determinant().signum();
        Self(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        exp_so3(&(axis.normalize() * angle))
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// `self * other`, re-projected onto SO(3) if round-off has pushed the
    /// product off the manifold.
    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0).renormalized()
    }

    pub fn renormalized(self) -> Self {
        if orthonormality_residual(&self.0) > ORTHONORMALITY_TOL {
            Self::project(&self.0)
        } else {
            self
        }
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// `‖RᵀR − I‖∞` (max-abs entry).
    pub fn orthonormality_residual(&self) -> f64 {
        orthonormality_residual(&self.0)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let w = unskew(&(self.0 - self.0.transpose())) * 0.5;
        let c = 0.5 * (self.0.trace() - 1.0);
        w.norm().atan2(c)
    }

    pub fn log(&self) -> Result<Vector3<f64>, LieError> {
        log_so3(self)
    }

    /// Body z axis expressed in the world frame (third column).
    pub fn z_axis(&self) -> Vector3<f64> {
        self.0.column(2).into_owned()
    }

    /// Z-Y-X Euler angles `(yaw, pitch, roll)` in radians.
    pub fn yaw_pitch_roll(&self) -> (f64, f64, f64) {
        let m = &self.0;
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        (yaw, pitch, roll)
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

fn orthonormality_residual(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

/// `(sin θ/θ, (1 − cos θ)/θ², (θ − sin θ)/θ³)` with Taylor fallbacks.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        let half = (0.5 * theta).sin();
        // θ − sin θ cancels badly for small θ; its series converges to
        // machine precision by the fifth term below 0.1 rad
        let c = if theta < 0.1 {
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362_880.0 + t2 * t2 * t2 * t2 / 39_916_800.0
        } else {
            (theta - theta.sin()) / (t2 * theta)
        };
        (theta.sin() / theta, 2.0 * half * half / t2, c)
    }
}

pub fn exp_so3(phi: &Vector3<f64>) -> Rotation {
    let (a, b, _) = rodrigues_coefficients(phi.norm());
    let k = skew(phi);
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Rotation vector of `r`. Fails within [`LOG_SINGULARITY_MARGIN`] of pi,
/// where the axis is no longer determined by the antisymmetric part.
pub fn log_so3(r: &Rotation) -> Result<Vector3<f64>, LieError> {
    let m = r.matrix();
    let w = unskew(&(m - m.transpose())) * 0.5;
    let s = w.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);
    if theta >= std::f64::consts::PI - LOG_SINGULARITY_MARGIN {
        return Err(LieError::LogSingularity { angle: theta });
    }
    if theta < SMALL_ANGLE {
        Ok(w * (1.0 + theta * theta / 6.0))
    } else {
        Ok(w * (theta / s))
    }
}

/// SO(3) left Jacobian `J_l(φ) = I + (1 − cos θ)/θ² φ^ + (θ − sin θ)/θ³ φ^²`.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let (_, b, c) = rodrigues_coefficients(phi.norm());
    let k = skew(phi);
    Matrix3::identity() + k * b + k * k * c
}

pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let d = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else if theta < 0.1 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30_240.0 + t2 * t2 * t2 / 1_209_600.0 + t2 * t2 * t2 * t2 / 47_900_160.0
    } else {
        let (s, c) = theta.sin_cos();
        1.0 / (theta * theta) - (1.0 + c) / (2.0 * theta * s)
    };
    Matrix3::identity() - k * 0.5 + k * k * d
}

/// Element of se_2(3) in vector form.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentVector {
    /// Rotational part (rad).
    pub theta: Vector3<f64>,
    /// Velocity part (m/s).
    pub vel: Vector3<f64>,
    /// Position part (m).
    pub pos: Vector3<f64>,
}

impl TangentVector {
    pub fn new(theta: Vector3<f64>, vel: Vector3<f64>, pos: Vector3<f64>) -> Self {
        Self { theta, vel, pos }
    }

    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn from_vector(x: &Vector9) -> Self {
        Self {
            theta: x.fixed_rows::<3>(0).into_owned(),
            vel: x.fixed_rows::<3>(3).into_owned(),
            pos: x.fixed_rows::<3>(6).into_owned(),
        }
    }

    /// Reads the first nine entries of `x`.
    pub fn from_slice(x: &[f64]) -> Self {
        Self::from_vector(&Vector9::from_column_slice(&x[..9]))
    }

    pub fn to_vector(&self) -> Vector9 {
        let mut x = Vector9::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.theta);
        x.fixed_rows_mut::<3>(3).copy_from(&self.vel);
        x.fixed_rows_mut::<3>(6).copy_from(&self.pos);
        x
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

impl std::ops::Neg for TangentVector {
    type Output = TangentVector;
    fn neg(self) -> TangentVector {
        TangentVector::new(-self.theta, -self.vel, -self.pos)
    }
}

/// Map from R^9 to the 5x5 algebra matrix.
pub fn hat(xi: &TangentVector) -> Matrix5<f64> {
    let mut m = Matrix5::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&xi.theta));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.vel);
    m.fixed_view_mut::<3, 1>(0, 4).copy_from(&xi.pos);
    m
}

/// Inverse of [`hat`]. Rejects matrices whose bottom rows are nonzero or whose
/// rotational block is not antisymmetric to within 1e-12.
pub fn vee(m: &Matrix5<f64>) -> Result<TangentVector, LieError> {
    if m.fixed_view::<2, 5>(3, 0).amax() > ALGEBRA_TOL {
        return Err(LieError::NotInAlgebra("bottom two rows must be zero"));
    }
    let w = m.fixed_view::<3, 3>(0, 0);
    if (w + w.transpose()).amax() > ALGEBRA_TOL {
        return Err(LieError::NotInAlgebra("rotational block is not skew-symmetric"));
    }
    Ok(TangentVector {
        theta: Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]),
        vel: m.fixed_view::<3, 1>(0, 3).into_owned(),
        pos: m.fixed_view::<3, 1>(0, 4).into_owned(),
    })
}

/// Element of SE_2(3): attitude, velocity and position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtendedPose {
    pub rot: Rotation,
    pub vel: Vector3<f64>,
    pub pos: Vector3<f64>,
}

impl ExtendedPose {
    pub fn new(rot: Rotation, vel: Vector3<f64>, pos: Vector3<f64>) -> Self {
        Self { rot, vel, pos }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn to_matrix(&self) -> Matrix5<f64> {
        let mut m = Matrix5::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rot.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.vel);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.pos);
        m
    }

    pub fn from_matrix(m: &Matrix5<f64>) -> Result<Self, LieError> {
        let bottom = m.fixed_view::<2, 5>(3, 0);
        let expected = Matrix5::<f64>::identity().fixed_view::<2, 5>(3, 0).into_owned();
        if (bottom - expected).amax() > ALGEBRA_TOL {
            return Err(LieError::NotInGroup("bottom two rows must be [0 1 0; 0 0 1]"));
        }
        Ok(Self {
            rot: Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?,
            vel: m.fixed_view::<3, 1>(0, 3).into_owned(),
            pos: m.fixed_view::<3, 1>(0, 4).into_owned(),
        })
    }

    /// Group product `self * other`.
    pub fn compose(&self, other: &ExtendedPose) -> Self {
        Self {
            rot: self.rot.compose(&other.rot),
            vel: self.rot.apply(&other.vel) + self.vel,
            pos: self.rot.apply(&other.pos) + self.pos,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.transpose();
        Self {
            rot: rt,
            vel: -rt.apply(&self.vel),
            pos: -rt.apply(&self.pos),
        }
    }

    pub fn exp(xi: &TangentVector) -> Self {
        exp_se23(xi)
    }

    pub fn log(&self) -> Result<TangentVector, LieError> {
        log_se23(self)
    }
}

impl std::ops::Mul for ExtendedPose {
    type Output = ExtendedPose;
    fn mul(self, rhs: ExtendedPose) -> ExtendedPose {
        self.compose(&rhs)
    }
}

pub fn exp_se23(xi: &TangentVector) -> ExtendedPose {
    let jl = left_jacobian(&xi.theta);
    ExtendedPose {
        rot: exp_so3(&xi.theta),
        vel: jl * xi.vel,
        pos: jl * xi.pos,
    }
}

pub fn log_se23(x: &ExtendedPose) -> Result<TangentVector, LieError> {
    let theta = log_so3(&x.rot)?;
    let jl_inv = left_jacobian_inv(&theta);
    Ok(TangentVector {
        theta,
        vel: jl_inv * x.vel,
        pos: jl_inv * x.pos,
    })
}
