mod common;

use geoquad::dynamics::{state_derivative, step, ControlInput, PlantMode, QuadParams, QuadState};
use geoquad::reference::{sample, table, TrajectoryKind, TrajectorySpec, YawMode};
use nalgebra::Vector3;

const INSTANT: PlantMode = PlantMode::Kinematic { tau_omega: 0.0 };

#[test]
fn rotation_stays_orthonormal_over_a_million_steps() {
    let p = QuadParams::default().without_drag();
    let mut s = QuadState::at_rest(Vector3::zeros());
    let u = ControlInput::new(p.hover_thrust(), Vector3::new(0.3, -0.7, 1.1));
    for _ in 0..1_000_000 {
        s = step(&s, &u, &p, &INSTANT, 0.002);
    }
    assert!(s.rot.orthonormality_residual() < 1e-9);
}

#[test]
fn free_fall_conserves_energy() {
    let p = QuadParams::default().without_drag();
    let mut s = QuadState::at_rest(Vector3::new(0.0, 0.0, 100.0));
    s.vel = Vector3::new(1.0, -2.0, 3.0);
    let energy = |s: &QuadState| 0.5 * p.mass * s.vel.norm_squared() + p.mass * p.gravity * s.pos.z;
    let e0 = energy(&s);
    let u = ControlInput::new(0.0, Vector3::zeros());
    for _ in 0..5000 {
        s = step(&s, &u, &p, &INSTANT, 0.002);
    }
    assert!(((energy(&s) - e0) / e0).abs() < 1e-6);
}

fn circle() -> TrajectorySpec {
    TrajectorySpec::default()
}

fn waypoints() -> TrajectorySpec {
    TrajectorySpec {
        kind: TrajectoryKind::WaypointPolynomial,
        waypoints: vec![[0.0, 0.0, 0.0], [1.0, 0.5, 0.3], [1.5, -0.5, 0.0], [0.0, 0.0, 0.2]],
        segment_time: 2.0,
        duration: 6.0,
        yaw_mode: YawMode::Fixed,
        yaw: 0.4,
        ..TrajectorySpec::default()
    }
}

#[test]
fn body_rate_matches_central_differences() {
    let p = QuadParams::default();
    let tangent = TrajectorySpec {
        yaw_mode: YawMode::Tangent,
        ..circle()
    };
    for spec in [circle(), tangent, waypoints()] {
        for i in 1..40 {
            let t = spec.duration * i as f64 / 40.0;
            let r = sample(&spec, t, &p).unwrap();
            let fd = common::body_rate_central_difference(|t| *sample(&spec, t, &p).unwrap().rot.matrix(), t, 1e-5);
            assert!((r.omega - fd).amax() < 1e-6, "{:?} t={t}: {:?} vs {:?}", spec.kind, r.omega, fd);
        }
    }
}

#[test]
fn circle_speed_thrust_and_axis() {
    let p = QuadParams::default();
    let w = 2.0 * std::f64::consts::PI / 30.0;
    for i in 0..30 {
        let r = sample(&circle(), i as f64, &p).unwrap();
        assert!((r.vel.norm() - w).abs() < 1e-12);
        assert!((r.acc.norm() - w * w).abs() < 1e-12);
        let thrust_acc = r.acc + Vector3::new(0.0, 0.0, p.gravity);
        assert!((r.thrust - p.mass * thrust_acc.norm()).abs() < 1e-12);
        assert!(r.rot.z_axis().cross(&thrust_acc.normalize()).norm() < 1e-9);
        assert!(r.rot.orthonormality_residual() < 1e-9);
    }
}

#[test]
fn integrating_derivatives_recovers_the_reference() {
    let p = QuadParams::default();
    for spec in [circle(), waypoints()] {
        let dt = 0.001;
        let refs = table(&spec, &p, dt, spec.duration - spec.duration % 0.002).unwrap();
        let n = refs.len() - 1;
        let n = n - n % 2;
        for axis in 0..3 {
            let vel: Vec<f64> = refs[..=n].iter().map(|r| r.vel[axis]).collect();
            let acc: Vec<f64> = refs[..=n].iter().map(|r| r.acc[axis]).collect();
            let dp = common::simpson(&vel, dt);
            let dv = common::simpson(&acc, dt);
            assert!((refs[n].pos[axis] - refs[0].pos[axis] - dp).abs() < 1e-6);
            assert!((refs[n].vel[axis] - refs[0].vel[axis] - dv).abs() < 1e-6);
        }
    }
}

#[test]
fn reference_is_dynamically_feasible() {
    // with no drag, (f_r, ω_r) applied at the reference state must reproduce
    // the reference derivatives
    let p = QuadParams::default().without_drag();
    for spec in [circle(), waypoints()] {
        for i in 1..30 {
            let t = spec.duration * i as f64 / 30.0;
            let r = sample(&spec, t, &p).unwrap();
            let s = QuadState {
                rot: r.rot,
                vel: r.vel,
                pos: r.pos,
                omega: r.omega,
            };
            let d = state_derivative(&s, &ControlInput::new(r.thrust, r.omega), &p, &INSTANT);
            assert!((d.pos_dot - r.vel).amax() < 1e-8);
            assert!((d.vel_dot - r.acc).amax() < 1e-8);
            assert!((d.body_rate - r.omega).amax() < 1e-8);
        }
    }
}
