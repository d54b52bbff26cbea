//! Independent reference computations for the integration tests. None of
//! these call into the code under test beyond plain data types.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.abs().row_sum().max();
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.25 {
        s += 1;
    }
    let a = m / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// 5×5 algebra element with rotation block, then velocity and position
/// columns.
pub fn hat5(x: &[f64; 9]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(5, 5);
    let w = skew(&Vector3::new(x[0], x[1], x[2]));
    m.view_mut((0, 0), (3, 3)).copy_from(&w);
    for i in 0..3 {
        m[(i, 3)] = x[3 + i];
        m[(i, 4)] = x[6 + i];
    }
    m
}

pub fn random_spd<R: Rng>(rng: &mut R, n: usize, min_eig: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * min_eig
}

pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Exact minimizer of `½xᵀHx + gᵀx` over a box, by trying every assignment
/// of each coordinate to {free, lower, upper} and keeping the best feasible
/// stationary point of each face. Exponential in the dimension.
pub fn box_qp_enumerate(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let d = g.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let total = 3usize.pow(d as u32);
    'sets: for code in 0..total {
        let mut c = code;
        let mut x = DVector::zeros(d);
        let mut free = Vec::new();
        for i in 0..d {
            match c % 3 {
                0 => free.push(i),
                1 if lo[i].is_finite() => x[i] = lo[i],
                2 if hi[i].is_finite() => x[i] = hi[i],
                _ => continue 'sets,
            }
            c /= 3;
        }
        if !free.is_empty() {
            let nf = free.len();
            let hff = DMatrix::from_fn(nf, nf, |a, b| h[(free[a], free[b])]);
            let fixed = x.clone();
            let rhs = DVector::from_fn(nf, |a, _| -(g[free[a]] + (h.row(free[a]) * &fixed)[0]));
            let Some(sol) = hff.lu().solve(&rhs) else { continue };
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[a];
            }
        }
        let feasible = (0..d).all(|i| x[i] >= lo[i] - 1e-12 && x[i] <= hi[i] + 1e-12);
        if !feasible {
            continue;
        }
        let f = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.expect("box QP has a feasible point").1
}

/// Optimal open-loop inputs for `x_{k+1} = A_k x_k + B_k u_k` from `x0`, cost
/// `Σ_{k<N} (x_kᵀQx_k + u_kᵀRu_k) + x_NᵀP_N x_N`, from one dense
/// least-squares solve over the stacked inputs.
pub fn batch_lqr_inputs(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_n: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> DVector<f64> {
    let n = x0.len();
    let m = b[0].ncols();
    let steps = a.len();
    // x_k = Φ_k x0 + Γ_k U
    let mut phi = vec![DMatrix::identity(n, n)];
    let mut gamma = vec![DMatrix::zeros(n, steps * m)];
    for k in 0..steps {
        phi.push(&a[k] * &phi[k]);
        let mut g = &a[k] * &gamma[k];
        g.view_mut((0, k * m), (n, m)).copy_from(&b[k]);
        gamma.push(g);
    }
    let mut hess = DMatrix::zeros(steps * m, steps * m);
    let mut lin = DVector::zeros(steps * m);
    for k in 0..=steps {
        let w = if k == steps { p_n } else { q };
        hess += gamma[k].transpose() * w * &gamma[k];
        lin += gamma[k].transpose() * w * (&phi[k] * x0);
        if k < steps {
            for i in 0..m {
                for j in 0..m {
                    hess[(k * m + i, k * m + j)] += r[(i, j)];
                }
            }
        }
    }
    hess.cholesky().expect("batch Hessian is SPD").solve(&(-lin))
}

/// First-step feedback gain `K_0` (with `u_0 = −K_0 x0`) of the batch problem.
pub fn batch_lqr_gain(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_n: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a[0].nrows();
    let m = b[0].ncols();
    let mut k = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let u = batch_lqr_inputs(a, b, q, r, p_n, &e);
        for i in 0..m {
            k[(i, j)] = -u[i];
        }
    }
    k
}

/// Stabilizing solution of the discrete algebraic Riccati equation by the
/// structure-preserving doubling algorithm, and the associated gain.
pub fn dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let r_inv = r.clone().try_inverse().expect("R invertible");
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    for _ in 0..200 {
        let w = (&id + &gk * &hk).try_inverse().expect("I + GH invertible");
        let a_next = &ak * &w * &ak;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w * &ak;
        let change = (&h_next - &hk).amax() / h_next.amax().max(1.0);
        ak = a_next;
        gk = (&g_next + g_next.transpose()) * 0.5;
        hk = (&h_next + h_next.transpose()) * 0.5;
        if change < 1e-15 {
            break;
        }
    }
    let p = hk;
    let k = (r + b.transpose() * &p * b)
        .cholesky()
        .expect("R + BᵀPB SPD")
        .solve(&(b.transpose() * &p * a));
    (p, k)
}

/// Body rate `vee(Rᵀ Ṙ)` with `Ṙ` from a central difference of `rot(t)`.
pub fn body_rate_central_difference(rot: impl Fn(f64) -> Matrix3<f64>, t: f64, h: f64) -> Vector3<f64> {
    let r = rot(t);
    let r_dot = (rot(t + h) - rot(t - h)) / (2.0 * h);
    let w = r.transpose() * r_dot;
    let a = (w - w.transpose()) * 0.5;
    Vector3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)])
}

/// Composite Simpson integral of equally spaced samples; `n` must be even.
pub fn simpson(samples: &[f64], h: f64) -> f64 {
    let n = samples.len() - 1;
    assert!(n % 2 == 0, "Simpson needs an even number of intervals");
    let mut s = samples[0] + samples[n];
    for (i, v) in samples.iter().enumerate().take(n).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}
