//! Dense box-constrained convex QP:
//!
//! ```text
//! minimize  ½ xᵀ H x + xᵀ g    subject to  lower ≤ x ≤ upper
//! ```
//!
//! Solved by accelerated projected gradient (FISTA, step `1/λmax(H)`) with
//! function-value restart. Every few iterations the current active set is
//! used to solve the reduced equality-constrained KKT system; when that
//! candidate satisfies the optimality conditions it is returned directly,
//! which gives solutions accurate to round-off once the active set settles.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: H is {h_rows}x{h_cols}, g has {g}, bounds have {lower} and {upper}")]
    Dimension {
        h_rows: usize,
        h_cols: usize,
        g: usize,
        lower: usize,
        upper: usize,
    },
    #[error("H is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("H is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("problem data contains NaN")]
    NotANumber,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    h: DMatrix<f64>,
    g: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    lipschitz: f64,
}

impl BoxQp {
    /// Validates shapes, symmetry (to `1e-10·max(1, ‖H‖)`) and positive
    /// semidefiniteness (to `−1e-8·‖H‖`). Bounds may be infinite.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, QpError> {
        let d = g.len();
        if h.nrows() != d || h.ncols() != d || lower.len() != d || upper.len() != d {
            return Err(QpError::Dimension {
                h_rows: h.nrows(),
                h_cols: h.ncols(),
                g: d,
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        if h.iter().chain(g.iter()).any(|v| !v.is_finite())
            || lower.iter().chain(upper.iter()).any(|v| v.is_nan())
        {
            return Err(QpError::NotANumber);
        }
        let scale = h.amax().max(1.0);
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        let sym = (&h + h.transpose()) * 0.5;
        let (min_eig, max_eig) = if d == 0 {
            (0.0, 0.0)
        } else {
            let eig = sym.clone().symmetric_eigenvalues();
            (eig.min(), eig.max())
        };
        if min_eig < -1e-8 * h.amax() {
            return Err(QpError::NotPsd(min_eig));
        }
        Ok(Self {
            h: sym,
            g,
            lower,
            upper,
            lipschitz: max_eig.max(0.0),
        })
    }

    /// Unconstrained problem (all bounds infinite).
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Result<Self, QpError> {
        let d = g.len();
        Self::new(
            h,
            g,
            DVector::from_element(d, f64::NEG_INFINITY),
            DVector::from_element(d, f64::INFINITY),
        )
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + x.dot(&self.g)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.g
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        x.zip_zip_map(&self.lower, &self.upper, |v, l, u| v.max(l).min(u))
    }

    /// Natural residual `‖x − Π(x − ∇f(x))‖∞`; zero exactly at the optimum.
    pub fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        let grad = self.gradient(x);
        (x - self.project(&(x - grad))).amax()
    }

    fn bounds_consistent(&self) -> bool {
        self.lower.iter().zip(self.upper.iter()).all(|(l, u)| l <= u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Absolute tolerance on [`BoxQp::kkt_residual`].
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations between active-set polishing attempts; 0 disables
    /// polishing, including the attempt at the starting point.
    pub polish_every: usize,
    /// Record the objective of every accepted iterate.
    pub record_objective: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            polish_every: 10,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    InfeasibleBounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub objective: f64,
    /// Objective of each accepted iterate, when requested.
    pub objective_trace: Vec<f64>,
}

pub fn solve(p: &BoxQp, opts: &QpOptions) -> QpSolution {
    solve_warm(p, opts, None)
}

/// Solves `p` starting from `warm` (projected onto the box), or from the
/// projection of the origin.
pub fn solve_warm(p: &BoxQp, opts: &QpOptions, warm: Option<&DVector<f64>>) -> QpSolution {
    let d = p.dim();
    if !p.bounds_consistent() {
        return QpSolution {
            x: DVector::zeros(d),
            iterations: 0,
            kkt_residual: f64::INFINITY,
            status: QpStatus::InfeasibleBounds,
            objective: f64::NAN,
            objective_trace: Vec::new(),
        };
    }
    let start = match warm {
        Some(w) if w.len() == d => w.clone(),
        _ => DVector::zeros(d),
    };
    let mut x = p.project(&start);
    let mut f_x = p.objective(&x);
    let mut trace = Vec::new();
    if opts.record_objective {
        trace.push(f_x);
    }
    let step = if p.lipschitz > 0.0 { 1.0 / p.lipschitz } else { 1.0 };

    let finish = |x: DVector<f64>, iterations: usize, status: QpStatus, trace: Vec<f64>| {
        let kkt_residual = p.kkt_residual(&x);
        let objective = p.objective(&x);
        QpSolution {
            x,
            iterations,
            kkt_residual,
            status,
            objective,
            objective_trace: trace,
        }
    };

    if p.kkt_residual(&x) <= opts.tol {
        return finish(x, 0, QpStatus::Optimal, trace);
    }
    if let Some(xp) = (opts.polish_every > 0)
        .then(|| polish(p, &x, step, opts.tol))
        .flatten()
    {
        if opts.record_objective {
            trace.push(p.objective(&xp));
        }
        return finish(xp, 0, QpStatus::Optimal, trace);
    }

    let mut x_prev = x.clone();
    let mut t = 1.0_f64;
    for it in 1..=opts.max_iter {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let y = &x + (&x - &x_prev) * ((t - 1.0) / t_next);
        let mut x_new = p.project(&(&y - p.gradient(&y) * step));
        let mut f_new = p.objective(&x_new);
        t = t_next;
        if f_new > f_x {
            // restart from a plain projected-gradient step, which cannot increase f
            t = 1.0;
            x_new = p.project(&(&x - p.gradient(&x) * step));
            f_new = p.objective(&x_new);
            if f_new > f_x {
                // only round-off can get here
                x_new = x.clone();
                f_new = f_x;
            }
        }
        x_prev = std::mem::replace(&mut x, x_new);
        f_x = f_new;
        if opts.record_objective {
            trace.push(f_x);
        }
        if p.kkt_residual(&x) <= opts.tol {
            return finish(x, it, QpStatus::Optimal, trace);
        }
        if opts.polish_every > 0 && it % opts.polish_every == 0 {
            if let Some(xp) = polish(p, &x, step, opts.tol) {
                if opts.record_objective {
                    trace.push(p.objective(&xp));
                }
                return finish(xp, it, QpStatus::Optimal, trace);
            }
        }
    }
    finish(x, opts.max_iter, QpStatus::MaxIter, trace)
}

/// Solves the KKT system on the active set guessed from one projected
/// gradient step at `x`. Returns the candidate only if it is optimal to `tol`.
fn polish(p: &BoxQp, x: &DVector<f64>, step: f64, tol: f64) -> Option<DVector<f64>> {
    let d = p.dim();
    let trial = x - p.gradient(x) * step;
    let mut fixed = DVector::<f64>::zeros(d);
    let mut free = Vec::with_capacity(d);
    for i in 0..d {
        if trial[i] <= p.lower[i] {
            fixed[i] = p.lower[i];
        } else if trial[i] >= p.upper[i] {
            fixed[i] = p.upper[i];
        } else {
            free.push(i);
        }
    }
    let mut candidate = fixed.clone();
    if !free.is_empty() {
        let nf = free.len();
        let h_ff = DMatrix::from_fn(nf, nf, |a, b| p.h[(free[a], free[b])]);
        let rhs = DVector::from_fn(nf, |a, _| {
            let i = free[a];
            let coupling: f64 = (0..d)
                .filter(|j| !free.contains(j))
                .map(|j| p.h[(i, j)] * fixed[j])
                .sum();
            -(p.g[i] + coupling)
        });
        let sol = h_ff.cholesky()?.solve(&rhs);
        for (a, &i) in free.iter().enumerate() {
            candidate[i] = sol[a];
        }
    }
    let candidate = p.project(&candidate);
    (p.kkt_residual(&candidate) <= tol).then_some(candidate)
}
