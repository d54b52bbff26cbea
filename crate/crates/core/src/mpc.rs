//! Condensed error-state MPC.
//!
//! Over a horizon of `N` steps the predicted errors are eliminated,
//! `δΞ = 𝒜 δξ_k + ℬ ΔU`, leaving a dense QP in the stacked input errors:
//!
//! ```text
//! minimize  ½ ΔUᵀ H ΔU + ΔUᵀ G    subject to  ΔU_min ≤ ΔU ≤ ΔU_max
//! H = 2(ℬᵀ Q̄ ℬ + R̄),   G = 2 ℬᵀ Q̄ 𝒜 δξ_k
//! ```
//!
//! which is the stage cost `Σ_{i=1..N} δξ_iᵀ Q δξ_i + Σ_{i=0..N-1} δu_iᵀ R δu_i`
//! up to the constant `δξ_kᵀ 𝒜ᵀ Q̄ 𝒜 δξ_k`. Only the first input block is
//! applied.

use nalgebra::{DMatrix, DVector, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{diag_blocks, input_weight};
use crate::dynamics::{ControlInput, QuadParams};
use crate::error_model::{recover_input, ErrorState, LinearizedModel, INPUT_DIM};
use crate::lie::Rotation;
use crate::qp::{self, BoxQp, QpError, QpOptions, QpSolution, QpStatus};
use crate::reference::ReferencePoint;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("MPC configuration invalid: {0}")]
    Config(String),
    #[error("dimension mismatch: model state {model}, error state {error}, weights {weights}")]
    Dimension { model: usize, error: usize, weights: usize },
    #[error("error state is not finite")]
    NonFinite,
    #[error("input bounds are inconsistent")]
    InfeasibleBounds,
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// How `(A, B)` vary across the prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HorizonModel {
    /// `(A_k, B_k)` frozen at the current step.
    #[default]
    Frozen,
    /// `(A_{k+i}, B_{k+i})`, holding the last entry past the end of the table.
    TimeVarying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    /// Prediction horizon `N_h`, steps.
    #[serde(rename = "N_h")]
    pub horizon: usize,
    pub q_theta: [f64; 3],
    pub q_v: [f64; 3],
    pub q_p: [f64; 3],
    /// Integral weight; required when the model is augmented.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_int: Option<[f64; 3]>,
    pub r_f: f64,
    pub r_omega: f64,
    /// Lower bounds on `(δf, δωx, δωy, δωz)`. Defaults to
    /// `(−½ m g, −2, −2, −2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub du_min: Option<[f64; 4]>,
    /// Upper bounds; defaults to `(½ m g, 2, 2, 2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub du_max: Option<[f64; 4]>,
    #[serde(default)]
    pub horizon_model: HorizonModel,
    #[serde(default = "default_tol")]
    pub qp_tol: f64,
    #[serde(default = "default_max_iter")]
    pub qp_max_iter: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    5000
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            q_theta: [1e5; 3],
            q_v: [5e6; 3],
            q_p: [7e9, 9e9, 4e9],
            q_int: None,
            r_f: 1e3,
            r_omega: 10.0,
            du_min: None,
            du_max: None,
            horizon_model: HorizonModel::Frozen,
            qp_tol: default_tol(),
            qp_max_iter: default_max_iter(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self, params: &QuadParams) -> Result<(), MpcError> {
        let bad = |m: &str| Err(MpcError::Config(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        let qs = self.q_theta.iter().chain(&self.q_v).chain(&self.q_p);
        if qs.chain(self.q_int.iter().flatten()).any(|q| !(*q > 0.0)) {
            return bad("state weights must be > 0");
        }
        if !(self.r_f > 0.0 && self.r_omega > 0.0) {
            return bad("input weights must be > 0");
        }
        if !(self.qp_tol > 0.0) || self.qp_max_iter == 0 {
            return bad("qp_tol must be > 0 and qp_max_iter >= 1");
        }
        let (lo, hi) = self.bounds(params);
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(MpcError::InfeasibleBounds);
        }
        Ok(())
    }

    /// Per-step input-error bounds.
    pub fn bounds(&self, params: &QuadParams) -> (Vector4<f64>, Vector4<f64>) {
        let half = 0.5 * params.hover_thrust();
        let lo = self.du_min.unwrap_or([-half, -2.0, -2.0, -2.0]);
        let hi = self.du_max.unwrap_or([half, 2.0, 2.0, 2.0]);
        (Vector4::from(lo), Vector4::from(hi))
    }

    /// Unbounded variant, used for the unconstrained analysis.
    pub fn unbounded(&self) -> Self {
        Self {
            du_min: Some([f64::NEG_INFINITY; 4]),
            du_max: Some([f64::INFINITY; 4]),
            ..self.clone()
        }
    }

    pub fn state_weight(&self) -> DMatrix<f64> {
        match &self.q_int {
            Some(qi) => diag_blocks(&[&self.q_theta, &self.q_v, &self.q_p, qi]),
            None => diag_blocks(&[&self.q_theta, &self.q_v, &self.q_p]),
        }
    }

    pub fn input_weight(&self) -> DMatrix<f64> {
        input_weight(self.r_f, self.r_omega)
    }

    fn qp_options(&self) -> QpOptions {
        QpOptions {
            tol: self.qp_tol,
            max_iter: self.qp_max_iter,
            ..QpOptions::default()
        }
    }
}

/// Stacked prediction matrices and the resulting QP data.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedProblem {
    /// `(N n) × n`, block `i` is the state transition over `i + 1` steps.
    pub cal_a: DMatrix<f64>,
    /// `(N n) × (N m)`, block lower triangular.
    pub cal_b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl CondensedProblem {
    pub fn to_qp(&self) -> Result<BoxQp, QpError> {
        BoxQp::new(self.h.clone(), self.g.clone(), self.lower.clone(), self.upper.clone())
    }
}

/// `(𝒜, ℬ)` over `horizon` steps starting at model index `k`.
pub fn prediction_matrices(
    model: &LinearizedModel,
    k: usize,
    horizon: usize,
    horizon_model: HorizonModel,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = model.state_dim();
    let m = INPUT_DIM;
    let at = |i: usize| match horizon_model {
        HorizonModel::Frozen => model.at(k),
        HorizonModel::TimeVarying => model.at(k + i),
    };
    let mut cal_a = DMatrix::zeros(horizon * n, n);
    let mut cal_b = DMatrix::zeros(horizon * n, horizon * m);
    let mut prev_a = DMatrix::identity(n, n);
    for i in 0..horizon {
        let (a, b) = at(i);
        let blk = a * &prev_a;
        cal_a.view_mut((i * n, 0), (n, n)).copy_from(&blk);
        prev_a = blk;
        if i > 0 {
            let above = cal_b.view(((i - 1) * n, 0), (n, i * m)).into_owned();
            cal_b.view_mut((i * n, 0), (n, i * m)).copy_from(&(a * above));
        }
        cal_b.view_mut((i * n, i * m), (n, m)).copy_from(b);
    }
    (cal_a, cal_b)
}

fn block_diag(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let s = block.nrows();
    let mut out = DMatrix::zeros(s * count, s * count);
    for i in 0..count {
        out.view_mut((i * s, i * s), (s, s)).copy_from(block);
    }
    out
}

fn check_dims(model: &LinearizedModel, cfg: &MpcConfig, err: &ErrorState) -> Result<(), MpcError> {
    let weights = cfg.state_weight().nrows();
    let n = model.state_dim();
    if n != err.dim() || n != weights {
        return Err(MpcError::Dimension {
            model: n,
            error: err.dim(),
            weights,
        });
    }
    Ok(())
}

/// Builds the condensed QP at model step `k` for the current error.
pub fn condense(
    model: &LinearizedModel,
    k: usize,
    cfg: &MpcConfig,
    err: &ErrorState,
    params: &QuadParams,
) -> Result<CondensedProblem, MpcError> {
    cfg.validate(params)?;
    check_dims(model, cfg, err)?;
    let horizon = cfg.horizon;
    let (cal_a, cal_b) = prediction_matrices(model, k, horizon, cfg.horizon_model);
    let q_bar = block_diag(&cfg.state_weight(), horizon);
    let r_bar = block_diag(&cfg.input_weight(), horizon);
    let bt_q = cal_b.transpose() * &q_bar;
    let h = (&bt_q * &cal_b + r_bar) * 2.0;
    let h = (&h + h.transpose()) * 0.5;
    let g = (&bt_q * (&cal_a * err.to_dvector())) * 2.0;
    let (lo, hi) = cfg.bounds(params);
    let lower = DVector::from_fn(horizon * INPUT_DIM, |i, _| lo[i % INPUT_DIM]);
    let upper = DVector::from_fn(horizon * INPUT_DIM, |i, _| hi[i % INPUT_DIM]);
    Ok(CondensedProblem {
        cal_a,
        cal_b,
        h,
        g,
        lower,
        upper,
    })
}

/// Stage-cost sum by explicit forward rollout of the stacked inputs `du`.
pub fn rollout_cost(
    model: &LinearizedModel,
    k: usize,
    cfg: &MpcConfig,
    err: &ErrorState,
    du: &DVector<f64>,
) -> f64 {
    let q = cfg.state_weight();
    let r = cfg.input_weight();
    let mut x = err.to_dvector();
    let mut cost = 0.0;
    for i in 0..cfg.horizon {
        let (a, b) = match cfg.horizon_model {
            HorizonModel::Frozen => model.at(k),
            HorizonModel::TimeVarying => model.at(k + i),
        };
        let u = du.rows(i * INPUT_DIM, INPUT_DIM).into_owned();
        x = a * &x + b * &u;
        cost += x.dot(&(&q * &x)) + u.dot(&(&r * &u));
    }
    cost
}

/// Unconstrained first-step feedback gain: `δu_0 = −K δξ_k` with `K` the
/// first `m` rows of `H⁻¹ · 2ℬᵀQ̄𝒜`.
pub fn first_step_gain(model: &LinearizedModel, k: usize, cfg: &MpcConfig) -> Result<DMatrix<f64>, MpcError> {
    let horizon = cfg.horizon;
    if cfg.state_weight().nrows() != model.state_dim() {
        return Err(MpcError::Dimension {
            model: model.state_dim(),
            error: model.state_dim(),
            weights: cfg.state_weight().nrows(),
        });
    }
    let (cal_a, cal_b) = prediction_matrices(model, k, horizon, cfg.horizon_model);
    let q_bar = block_diag(&cfg.state_weight(), horizon);
    let r_bar = block_diag(&cfg.input_weight(), horizon);
    let bt_q = cal_b.transpose() * &q_bar;
    let h = (&bt_q * &cal_b + r_bar) * 2.0;
    let h = (&h + h.transpose()) * 0.5;
    let rhs = (&bt_q * &cal_a) * 2.0;
    let chol = h
        .cholesky()
        .ok_or_else(|| MpcError::Config("H is not positive definite".into()))?;
    Ok(chol.solve(&rhs).rows(0, INPUT_DIM).into_owned())
}

/// Result of one MPC evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcStep {
    pub input: ControlInput,
    pub du: Vector4<f64>,
    /// Previous solution shifted by one block, last block repeated.
    pub warm_start: DVector<f64>,
    pub qp: QpSolution,
}

/// Solves the condensed QP and recovers the actuation from its first block.
#[allow(clippy::too_many_arguments)]
pub fn mpc_control(
    err: &ErrorState,
    model: &LinearizedModel,
    k: usize,
    cfg: &MpcConfig,
    params: &QuadParams,
    reference: &ReferencePoint,
    delta_r: &Rotation,
    warm_start: Option<&DVector<f64>>,
) -> Result<MpcStep, MpcError> {
    if !err.is_finite() {
        return Err(MpcError::NonFinite);
    }
    let problem = condense(model, k, cfg, err, params)?;
    let qp_problem = problem.to_qp()?;
    let sol = qp::solve_warm(&qp_problem, &cfg.qp_options(), warm_start);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::MaxIter => log::warn!(
            "MPC QP hit the iteration limit at step {k} (kkt residual {:.3e}); using the last iterate",
            sol.kkt_residual
        ),
        QpStatus::InfeasibleBounds => return Err(MpcError::InfeasibleBounds),
    }
    let m = INPUT_DIM;
    let du = Vector4::new(sol.x[0], sol.x[1], sol.x[2], sol.x[3]);
    let d = sol.x.len();
    let mut warm = DVector::zeros(d);
    warm.rows_mut(0, d - m).copy_from(&sol.x.rows(m, d - m));
    warm.rows_mut(d - m, m).copy_from(&sol.x.rows(d - m, m));
    Ok(MpcStep {
        input: recover_input(&du, reference, delta_r),
        du,
        warm_start: warm,
        qp: sol,
    })
}
