//! End-to-end acceptance checks. Prints one line per criterion and fails if
//! any criterion other than the documented known failure misses its bound.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use geoquad::controllers::{finite_horizon_lqr, CascadeGains};
use geoquad::dynamics::QuadParams;
use geoquad::error_model::{linearize, validate_linearization, ModelConfig};
use geoquad::lie::{exp_se23, log_se23, TangentVector};
use geoquad::mpc::{first_step_gain, MpcConfig};
use geoquad::qp::{solve, BoxQp, QpOptions, QpStatus};
use geoquad::reference::{table, TrajectorySpec};
use geoquad::sim::{run, ControllerConfig, ExperimentConfig, RunResult};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria whose bound is currently out of reach with the shipped defaults.
/// Each entry must keep failing; a pass means the note should be revisited.
const KNOWN_FAILURES: &[(u32, &str)] = &[(
    7,
    "the simulated LQR tracks the circle with about 2 mm/s of velocity error on the \
     default airframe, under the band's 3 mm/s floor",
)];

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    let path = configs_dir().join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    cfg.validate().unwrap();
    cfg
}

fn lie_kernel() -> Outcome {
    let ((roundtrip, oracle), elapsed) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut roundtrip: f64 = 0.0;
        let mut oracle: f64 = 0.0;
        for _ in 0..1000 {
            let axis = nalgebra::Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let angle = rng.random_range(0.0..std::f64::consts::PI - 0.01);
            let v = nalgebra::Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let p = nalgebra::Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let xi = TangentVector::new(axis * angle, v, p);
            let back = log_se23(&exp_se23(&xi)).unwrap();
            roundtrip = roundtrip.max((back.to_vector() - xi.to_vector()).amax());

            let x: [f64; 9] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let ours = exp_se23(&TangentVector::from_slice(&x)).to_matrix();
            let dense = common::expm(&common::hat5(&x));
            oracle = oracle.max(DMatrix::from_fn(5, 5, |i, j| ours[(i, j)] - dense[(i, j)]).amax());
        }
        (roundtrip, oracle)
    });
    Outcome {
        id: 1,
        name: "Lie kernel roundtrip and exp oracle",
        pass: roundtrip < 1e-9 && oracle < 1e-9 && elapsed.as_secs_f64() < 5.0,
        detail: format!("roundtrip {roundtrip:.1e}, exp vs oracle {oracle:.1e}, {:.2} s", elapsed.as_secs_f64()),
    }
}

fn linearization() -> Outcome {
    let cfg = load("sim1_lqr.json");
    let (report, elapsed) = timed(|| {
        let refs = table(&cfg.trajectory, &cfg.plant, cfg.dt, cfg.duration).unwrap();
        validate_linearization(&refs, &cfg.plant, &ModelConfig::new(cfg.dt), 1e-5, 1).unwrap()
    });
    Outcome {
        id: 2,
        name: "linearization finite-difference check",
        pass: report.max_relative_residual < 1e-4 && elapsed.as_secs_f64() < 10.0,
        detail: format!(
            "max residual {:.3e} over {} steps, {:.2} s",
            report.max_relative_residual,
            report.steps_checked,
            elapsed.as_secs_f64()
        ),
    }
}

fn lqr_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for case in 0..40 {
        let n = if case < 20 { 1 } else { 2 };
        let a: Vec<_> = (0..3).map(|_| common::random_matrix(&mut rng, n, n, 1.5)).collect();
        let b: Vec<_> = (0..3).map(|_| common::random_matrix(&mut rng, n, 1, 1.0)).collect();
        let q = common::random_spd(&mut rng, n, 0.1);
        let r = common::random_spd(&mut rng, 1, 0.1);
        let (gains, _) = finite_horizon_lqr(&a, &b, &q, &r, &q).unwrap();
        for k in 0..3 {
            let oracle = common::batch_lqr_gain(&a[k..], &b[k..], &q, &r, &q);
            worst = worst.max((&gains[k] - oracle).amax());
        }
    }
    Outcome {
        id: 3,
        name: "LQR gains vs batch oracle",
        pass: worst < 1e-9,
        detail: format!("worst gain error {worst:.1e} over 20 scalar and 20 two-state systems"),
    }
}

fn qp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = QpOptions::default();
    let mut worst: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    let mut not_optimal = 0;
    for _ in 0..200 {
        let d = rng.random_range(1..=8);
        let h = common::random_spd(&mut rng, d, 0.05) * rng.random_range(0.5..20.0);
        let g: DVector<f64> = common::random_matrix(&mut rng, d, 1, 10.0).column(0).into_owned();
        let lo = DVector::from_fn(d, |_, _| rng.random_range(-2.0..0.5));
        let hi = DVector::from_fn(d, |i, _| lo[i] + rng.random_range(0.0..2.5));
        let p = BoxQp::new(h, g, lo, hi).unwrap();
        let sol = solve(&p, &opts);
        if sol.status == QpStatus::Optimal {
            worst_kkt = worst_kkt.max(sol.kkt_residual);
        } else {
            not_optimal += 1;
        }
        let oracle = common::box_qp_enumerate(p.h(), p.g(), p.lower(), p.upper());
        worst = worst.max((sol.x - oracle).amax());
    }
    Outcome {
        id: 4,
        name: "box QP vs active-set enumeration",
        pass: worst < 1e-7 && worst_kkt < 1e-8 && not_optimal == 0,
        detail: format!("worst solution error {worst:.1e}, worst KKT {worst_kkt:.1e}, {not_optimal} not optimal"),
    }
}

fn mpc_riccati() -> Outcome {
    let p = QuadParams::default();
    let refs = table(&TrajectorySpec::hover([0.0, 0.0, 1.0], 1.0), &p, 0.002, 1.0).unwrap();
    let model = linearize(&refs, &p, &ModelConfig::new(0.002)).unwrap();
    let base = MpcConfig::default().unbounded();
    let (a, b) = model.at(0);
    let (_, k_inf) = common::dare(a, b, &base.state_weight(), &base.input_weight());
    let horizons = [10, 25, 50, 100, 200];
    let errors: Vec<f64> = horizons
        .iter()
        .map(|&horizon| {
            let cfg = MpcConfig { horizon, ..base.clone() };
            (first_step_gain(&model, 0, &cfg).unwrap() - &k_inf).amax()
        })
        .collect();
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    let last = *errors.last().unwrap();
    Outcome {
        id: 5,
        name: "MPC first-step gain vs Riccati gain",
        pass: monotone && last < 1e-3,
        detail: format!(
            "error at N_h = {horizons:?}: [{}], monotone {monotone}",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn replicas() -> (RunResult, RunResult, RunResult, Duration) {
    let mpc_cfg = load("sim2_mpc.json");
    let lqr_cfg = load("sim1_lqr.json");
    let cascade_cfg = ExperimentConfig {
        name: "sim_cascade".into(),
        controller: ControllerConfig::Cascade(CascadeGains::default()),
        ..lqr_cfg.clone()
    };
    // timed separately so the bound applies to a single run
    let (mpc, mpc_time) = timed(|| run(&mpc_cfg).unwrap());
    let (lqr, cascade) = std::thread::scope(|s| {
        let l = s.spawn(|| run(&lqr_cfg).unwrap());
        let c = s.spawn(|| run(&cascade_cfg).unwrap());
        (l.join().unwrap(), c.join().unwrap())
    });
    (mpc, lqr, cascade, mpc_time)
}

fn sim2(mpc: &RunResult, elapsed: Duration) -> Outcome {
    let s = &mpc.summary;
    Outcome {
        id: 6,
        name: "MPC circle replica",
        pass: !mpc.diverged()
            && s.pos_err_ss <= 0.15
            && s.vel_err_ss <= 0.015
            && s.att_err_ss <= 1.5
            && elapsed.as_secs_f64() < 60.0,
        detail: format!(
            "pos {:.3e} m (<= 0.15), vel {:.3e} m/s (<= 0.015), att {:.3} deg (<= 1.5), {} steps in {:.1} s",
            s.pos_err_ss,
            s.vel_err_ss,
            s.att_err_ss,
            mpc.samples.len(),
            elapsed.as_secs_f64()
        ),
    }
}

fn sim1(lqr: &RunResult) -> Outcome {
    let s = &lqr.summary;
    let vel_ok = (0.003..=0.06).contains(&s.vel_err_ss);
    let att_ok = s.att_err_ss <= 1.5 && s.att_err_peak > s.att_err_ss;
    Outcome {
        id: 7,
        name: "LQR circle replica",
        pass: !lqr.diverged() && vel_ok && att_ok,
        detail: format!(
            "vel {:.3e} m/s (in [0.003, 0.06]: {vel_ok}), att {:.3} deg peak {:.3} deg (<= 1.5 with overshoot: {att_ok})",
            s.vel_err_ss, s.att_err_ss, s.att_err_peak
        ),
    }
}

fn ordering(mpc: &RunResult, lqr: &RunResult, cascade: &RunResult) -> Outcome {
    let (m, l, c) = (mpc.summary.pos_err_ss, lqr.summary.pos_err_ss, cascade.summary.pos_err_ss);
    Outcome {
        id: 8,
        name: "controller ordering",
        pass: m <= l && l <= c,
        detail: format!("pos_err_ss mpc {m:.3e} <= lqr {l:.3e} <= cascade {c:.3e}"),
    }
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig {
        noise: geoquad::sim::NoiseConfig::mocap(42),
        ..load("sim1_lqr.json")
    };
    let bytes = || {
        let mut buf = Vec::new();
        run(&cfg).unwrap().write_csv(&mut buf).unwrap();
        buf
    };
    let (a, b) = (bytes(), bytes());
    Outcome {
        id: 9,
        name: "seeded runs are byte-identical",
        pass: a == b,
        detail: format!("{} bytes each, identical {}", a.len(), a == b),
    }
}

fn main() {
    let mut outcomes = vec![lie_kernel(), linearization(), lqr_oracle(), qp_oracle(), mpc_riccati()];
    let (mpc, lqr, cascade, mpc_time) = replicas();
    outcomes.push(sim2(&mpc, mpc_time));
    outcomes.push(sim1(&lqr));
    outcomes.push(ordering(&mpc, &lqr, &cascade));
    outcomes.push(determinism());

    let mut problems = Vec::new();
    for o in &outcomes {
        let known = KNOWN_FAILURES.iter().find(|(id, _)| *id == o.id);
        let tag = match (o.pass, known) {
            (true, None) => "PASS",
            (false, Some(_)) => "FAIL (known)",
            (false, None) => "FAIL",
            (true, Some(_)) => "PASS (unexpected)",
        };
        println!("criterion {}: {tag}: {}: {}", o.id, o.name, o.detail);
        if let Some((_, why)) = known {
            if !o.pass {
                println!("    known failure: {why}");
            }
        }
        match (o.pass, known) {
            (false, None) => problems.push(format!("criterion {} failed", o.id)),
            (true, Some(_)) => problems.push(format!("criterion {} now passes; update KNOWN_FAILURES", o.id)),
            _ => {}
        }
    }
    if !problems.is_empty() {
        eprintln!("{}", problems.join("\n"));
        std::process::exit(1);
    }
}
