//! Closed-loop simulation: reference, plant, controller, noise and metrics.

use std::io::Write;

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{cascade_control, lqr_control, solve_lqr, CascadeGains, GainSchedule, LqrWeights};
use crate::dynamics::{step, ControlInput, PlantMode, QuadParams, QuadState};
use crate::error_model::{input_error, invariant_error, linearize, Discretization, ErrorState, LinearizedModel, ModelConfig};
use crate::lie::{exp_so3, ExtendedPose};
use crate::mpc::{mpc_control, MpcConfig};
use crate::reference::{table, ReferencePoint, TrajectoryKind, TrajectorySpec};

/// ‖δp‖ beyond which a run is declared diverged, m.
pub const DIVERGENCE_THRESHOLD: f64 = 10.0;

/// Fraction of the run, counted from the end, over which steady-state
/// metrics are averaged.
pub const STEADY_STATE_WINDOW: f64 = 0.5;

pub const CSV_HEADER: [&str; 23] = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "yaw", "pitch", "roll", "wx", "wy", "wz", "f", "dwx", "dwy", "dwz", "df",
    "err_p", "err_v", "err_th", "qp_iters", "qp_kkt",
];

#[derive(Debug, Error)]
pub enum SimError {
    /// `key` is the dotted path of the offending config entry.
    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("controller failed at t = {t:.4} s: {reason}")]
    Controller { t: f64, reason: String },
    #[error("scenarios differ: {0}")]
    ScenarioMismatch(String),
    #[error("comparison needs at least two runs")]
    TooFewRuns,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SimError {
    fn config(key: &str, reason: impl ToString) -> Self {
        SimError::Config {
            key: key.to_string(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrSettings {
    #[serde(default)]
    pub weights: LqrWeights,
    /// Append the integral of `δv + c1 δp` to the state.
    #[serde(default = "yes")]
    pub augmented: bool,
    #[serde(default = "default_c1")]
    pub c1: f64,
}

fn yes() -> bool {
    true
}

fn default_c1() -> f64 {
    0.01
}

impl Default for LqrSettings {
    fn default() -> Self {
        Self {
            weights: LqrWeights::default(),
            augmented: true,
            c1: default_c1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerConfig {
    Lqr(LqrSettings),
    Mpc(MpcConfig),
    Cascade(CascadeGains),
}

impl ControllerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerConfig::Lqr(_) => "lqr",
            ControllerConfig::Mpc(_) => "mpc",
            ControllerConfig::Cascade(_) => "cascade",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mismatch {
    pub drag_in_plant: bool,
    pub drag_in_model: bool,
}

impl Default for Mismatch {
    fn default() -> Self {
        Self {
            drag_in_plant: true,
            drag_in_model: false,
        }
    }
}

/// Additive Gaussian measurement noise. Attitude noise is applied as
/// `R exp(η^)` with `η ~ N(0, att_std² I)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub pos_std: f64,
    #[serde(default)]
    pub vel_std: f64,
    #[serde(default)]
    pub att_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    /// Motion-capture-like levels: 1 mm, 0.01 m/s, 0.2°.
    pub fn mocap(seed: u64) -> Self {
        Self {
            pos_std: 1e-3,
            vel_std: 0.01,
            att_std: 0.2_f64.to_radians(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Level and at rest at `p_r(0) + offset`.
    AtRest {
        #[serde(default)]
        offset: [f64; 3],
    },
    /// Exactly on the reference, with the reference body rate.
    OnReference,
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::AtRest { offset: [0.0; 3] }
    }
}

/// Everything that defines one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub plant: QuadParams,
    #[serde(default)]
    pub plant_mode: PlantMode,
    pub controller: ControllerConfig,
    /// Plant integration step, s.
    pub dt: f64,
    /// Simulated time, s.
    pub duration: f64,
    #[serde(default)]
    pub mismatch: Mismatch,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub initial: InitialCondition,
    /// Controller runs every `decimation` plant steps and holds its output.
    #[serde(default = "one_step")]
    pub decimation: usize,
    #[serde(default)]
    pub discretization: Discretization,
}

fn default_name() -> String {
    "experiment".into()
}

fn one_step() -> usize {
    1
}

/// The parts of an experiment that must agree for runs to be comparable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub trajectory: TrajectorySpec,
    pub plant: QuadParams,
    pub plant_mode: PlantMode,
    pub dt: f64,
    pub duration: f64,
    pub mismatch: Mismatch,
    pub noise: NoiseConfig,
    pub initial: InitialCondition,
}

impl ExperimentConfig {
    /// One period of the 1 m / 30 s circle at 500 Hz with drag in the plant
    /// only, starting on the reference. The plant integrates the rigid-body
    /// rotational dynamics behind a 100 1/s rate loop.
    pub fn circle(controller: ControllerConfig) -> Self {
        Self {
            name: format!("circle_{}", controller.name()),
            trajectory: TrajectorySpec::default(),
            plant: QuadParams::default(),
            plant_mode: PlantMode::Torque { rate_gain: [100.0; 3] },
            controller,
            dt: 0.002,
            duration: 30.0,
            mismatch: Mismatch::default(),
            noise: NoiseConfig::default(),
            initial: InitialCondition::OnReference,
            decimation: 1,
            discretization: Discretization::Euler,
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            trajectory: self.trajectory.clone(),
            plant: self.plant.clone(),
            plant_mode: self.plant_mode,
            dt: self.dt,
            duration: self.duration,
            mismatch: self.mismatch,
            noise: self.noise,
            initial: self.initial,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::config("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SimError::config("duration", format!("must be > 0, got {}", self.duration)));
        }
        if self.trajectory.kind == TrajectoryKind::Circle && self.duration < self.trajectory.period - 1e-9 {
            return Err(SimError::config(
                "duration",
                format!("must cover one period ({} s), got {}", self.trajectory.period, self.duration),
            ));
        }
        if self.duration > self.trajectory.duration + 1e-9 {
            return Err(SimError::config(
                "trajectory.duration",
                format!("{} s is shorter than the run ({} s)", self.trajectory.duration, self.duration),
            ));
        }
        self.trajectory.validate().map_err(|e| SimError::config("trajectory", e))?;
        self.plant.validate().map_err(|e| SimError::config("plant", e))?;
        self.plant_mode.validate().map_err(|e| SimError::config("plant_mode", e))?;
        if self.decimation == 0 {
            return Err(SimError::config("decimation", "must be >= 1"));
        }
        for (key, v) in [
            ("noise.pos_std", self.noise.pos_std),
            ("noise.vel_std", self.noise.vel_std),
            ("noise.att_std", self.noise.att_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::config(key, format!("must be >= 0, got {v}")));
            }
        }
        match &self.controller {
            ControllerConfig::Lqr(s) => {
                s.weights.validate().map_err(|e| SimError::config("controller.lqr.weights", e))?;
                if s.augmented && !(s.c1 > 0.0) {
                    return Err(SimError::config("controller.lqr.c1", format!("must be > 0, got {}", s.c1)));
                }
            }
            ControllerConfig::Mpc(m) => {
                m.validate(&self.plant).map_err(|e| SimError::config("controller.mpc", e))?;
            }
            ControllerConfig::Cascade(g) => {
                if !(g.integral_limit >= 0.0) {
                    return Err(SimError::config("controller.cascade.integral_limit", "must be >= 0"));
                }
            }
        }
        Ok(())
    }

    fn plant_params(&self) -> QuadParams {
        if self.mismatch.drag_in_plant {
            self.plant.clone()
        } else {
            self.plant.without_drag()
        }
    }
}

/// One row of the run log, one per plant step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    /// Yaw, pitch, roll (ZYX), rad.
    pub ypr: [f64; 3],
    /// Body rate of the vehicle, rad/s.
    pub omega: [f64; 3],
    pub thrust: f64,
    /// Input error `(δf, δω)` implied by the applied actuation.
    pub du: [f64; 4],
    /// ‖p_r − p‖, m.
    pub err_p: f64,
    /// ‖v_r − v‖, m/s.
    pub err_v: f64,
    /// ‖log(Rᵀ R_r)‖, rad.
    pub err_th: f64,
    pub qp_iters: usize,
    pub qp_kkt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean ‖δp‖ over the steady-state window, m.
    pub pos_err_ss: f64,
    /// Mean ‖δv‖ over the steady-state window, m/s.
    pub vel_err_ss: f64,
    /// Mean ‖δθ‖ over the steady-state window, degrees.
    pub att_err_ss: f64,
    pub pos_err_peak: f64,
    pub vel_err_peak: f64,
    /// Degrees.
    pub att_err_peak: f64,
    /// Root mean square of ‖δp‖ over the whole run, m.
    pub rmse: f64,
    pub qp_iters_max: usize,
    pub qp_kkt_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub name: String,
    pub controller: String,
    pub scenario: Scenario,
    pub status: RunStatus,
    pub samples: Vec<Sample>,
    pub summary: Summary,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    name: &'a str,
    controller: &'a str,
    #[serde(flatten)]
    status: RunStatus,
    steady_state_window: f64,
    steps: usize,
    #[serde(flatten)]
    summary: Summary,
}

/// Shortest representation that reads back to the same `f64`.
fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

impl RunResult {
    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for s in &self.samples {
            let mut row: Vec<String> = Vec::with_capacity(CSV_HEADER.len());
            row.push(fmt_f64(s.t));
            row.extend(s.pos.iter().chain(&s.vel).chain(&s.ypr).chain(&s.omega).map(|x| fmt_f64(*x)));
            row.push(fmt_f64(s.thrust));
            // δω first, then δf, as in the column names
            row.extend([s.du[1], s.du[2], s.du[3], s.du[0]].map(fmt_f64));
            row.extend([s.err_p, s.err_v, s.err_th].map(fmt_f64));
            row.push(s.qp_iters.to_string());
            row.push(fmt_f64(s.qp_kkt));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        let file = SummaryFile {
            name: &self.name,
            controller: &self.controller,
            status: self.status,
            steady_state_window: STEADY_STATE_WINDOW,
            steps: self.samples.len(),
            summary: self.summary,
        };
        serde_json::to_string_pretty(&file).expect("summary serializes")
    }
}

pub fn summarize(samples: &[Sample]) -> Summary {
    let n = samples.len();
    let start = ((n as f64) * (1.0 - STEADY_STATE_WINDOW)).floor() as usize;
    let window = &samples[start.min(n)..];
    let mean = |f: &dyn Fn(&Sample) -> f64| {
        if window.is_empty() {
            f64::NAN
        } else {
            window.iter().map(f).sum::<f64>() / window.len() as f64
        }
    };
    let peak = |f: &dyn Fn(&Sample) -> f64| samples.iter().map(f).fold(0.0, f64::max);
    let rmse = if n == 0 {
        f64::NAN
    } else {
        (samples.iter().map(|s| s.err_p * s.err_p).sum::<f64>() / n as f64).sqrt()
    };
    Summary {
        pos_err_ss: mean(&|s| s.err_p),
        vel_err_ss: mean(&|s| s.err_v),
        att_err_ss: mean(&|s| s.err_th).to_degrees(),
        pos_err_peak: peak(&|s| s.err_p),
        vel_err_peak: peak(&|s| s.err_v),
        att_err_peak: peak(&|s| s.err_th).to_degrees(),
        rmse,
        qp_iters_max: samples.iter().map(|s| s.qp_iters).max().unwrap_or(0),
        qp_kkt_max: samples.iter().map(|s| s.qp_kkt).fold(0.0, f64::max),
    }
}

enum Synth {
    Lqr {
        model: LinearizedModel,
        gains: GainSchedule,
    },
    Mpc {
        model: LinearizedModel,
        cfg: MpcConfig,
        warm: Option<DVector<f64>>,
    },
    Cascade {
        gains: CascadeGains,
        integral: Vector3<f64>,
    },
}

struct Measurement {
    rng: ChaCha8Rng,
    noise: NoiseConfig,
    unit: Normal<f64>,
}

impl Measurement {
    fn new(noise: NoiseConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            noise,
            unit: Normal::new(0.0, 1.0).expect("unit normal"),
        }
    }

    fn draw(&mut self, std: f64) -> Vector3<f64> {
        if std == 0.0 {
            return Vector3::zeros();
        }
        Vector3::from_fn(|_, _| std * self.unit.sample(&mut self.rng))
    }

    fn measure(&mut self, s: &QuadState) -> QuadState {
        let dp = self.draw(self.noise.pos_std);
        let dv = self.draw(self.noise.vel_std);
        let eta = self.draw(self.noise.att_std);
        QuadState {
            rot: s.rot.compose(&exp_so3(&eta)),
            vel: s.vel + dv,
            pos: s.pos + dp,
            omega: s.omega,
        }
    }
}

fn model_config(cfg: &ExperimentConfig, augmented: bool, c1: f64) -> ModelConfig {
    ModelConfig {
        augmented,
        c1,
        dt: cfg.dt * cfg.decimation as f64,
        drag_in_model: cfg.mismatch.drag_in_model,
        discretization: cfg.discretization,
    }
}

fn synthesize(cfg: &ExperimentConfig, ctrl_refs: &[ReferencePoint]) -> Result<Synth, SimError> {
    let key = |k: &str| format!("controller.{}{k}", cfg.controller.name());
    Ok(match &cfg.controller {
        ControllerConfig::Lqr(s) => {
            let mcfg = model_config(cfg, s.augmented, s.c1);
            let model = linearize(ctrl_refs, &cfg.plant, &mcfg).map_err(|e| SimError::config(&key(""), e))?;
            let gains = solve_lqr(&model, &s.weights).map_err(|e| SimError::config(&key(".weights"), e))?;
            Synth::Lqr { model, gains }
        }
        ControllerConfig::Mpc(m) => {
            let mcfg = model_config(cfg, m.q_int.is_some(), default_c1());
            let model = linearize(ctrl_refs, &cfg.plant, &mcfg).map_err(|e| SimError::config(&key(""), e))?;
            Synth::Mpc {
                model,
                cfg: m.clone(),
                warm: None,
            }
        }
        ControllerConfig::Cascade(g) => Synth::Cascade {
            gains: g.clone(),
            integral: Vector3::zeros(),
        },
    })
}

fn initial_state(cfg: &ExperimentConfig, r0: &ReferencePoint) -> QuadState {
    match cfg.initial {
        InitialCondition::AtRest { offset } => QuadState::at_rest(r0.pos + Vector3::from(offset)),
        InitialCondition::OnReference => QuadState {
            rot: r0.rot,
            vel: r0.vel,
            pos: r0.pos,
            omega: r0.omega,
        },
    }
}

/// Runs one experiment. Divergence is reported in the result, not as an
/// error; errors are reserved for invalid configs and controller failures.
pub fn run(cfg: &ExperimentConfig) -> Result<RunResult, SimError> {
    cfg.validate()?;
    let refs = table(&cfg.trajectory, &cfg.plant, cfg.dt, cfg.duration).map_err(|e| SimError::config("trajectory", e))?;
    let ctrl_refs: Vec<ReferencePoint> = refs.iter().step_by(cfg.decimation).copied().collect();
    let mut synth = synthesize(cfg, &ctrl_refs)?;
    let plant = cfg.plant_params();
    let mut meas = Measurement::new(cfg.noise);
    let ctrl_dt = cfg.dt * cfg.decimation as f64;

    let mut state = initial_state(cfg, &refs[0]);
    let mut xi_int = Vector3::zeros();
    let mut input = ControlInput::new(refs[0].thrust, refs[0].omega);
    let mut du = [0.0; 4];
    let mut qp_stats = (0usize, 0.0f64);
    let mut samples = Vec::with_capacity(refs.len());
    let mut status = RunStatus::Completed;

    for (k, r) in refs.iter().enumerate() {
        let t = r.t;
        let fail = |e: &dyn std::fmt::Display| SimError::Controller { t, reason: e.to_string() };

        if k % cfg.decimation == 0 {
            let kc = k / cfg.decimation;
            let measured = meas.measure(&state);
            let x = ExtendedPose::new(measured.rot, measured.vel, measured.pos);
            let err = invariant_error(&x, &r.pose()).map_err(|e| fail(&e))?;
            let delta_r = measured.rot.transpose().compose(&r.rot);
            input = match &mut synth {
                Synth::Lqr { model, gains } => {
                    let e = if model.config.augmented {
                        ErrorState::augmented(err.xi, xi_int)
                    } else {
                        err
                    };
                    let gain = gains.gain(kc.min(gains.len() - 1)).map_err(|e| fail(&e))?;
                    let (u, d) = lqr_control(&e, gain, r, &delta_r).map_err(|e| fail(&e))?;
                    du = [d[0], d[1], d[2], d[3]];
                    u
                }
                Synth::Mpc { model, cfg: mcfg, warm } => {
                    let e = if model.config.augmented {
                        ErrorState::augmented(err.xi, xi_int)
                    } else {
                        err
                    };
                    let out = mpc_control(&e, model, kc, mcfg, &cfg.plant, r, &delta_r, warm.as_ref())
                        .map_err(|e| fail(&e))?;
                    *warm = Some(out.warm_start);
                    du = [out.du[0], out.du[1], out.du[2], out.du[3]];
                    qp_stats = (out.qp.iterations, out.qp.kkt_residual);
                    out.input
                }
                Synth::Cascade { gains, integral } => {
                    let u = cascade_control(&measured, r, gains, integral, &cfg.plant).map_err(|e| fail(&e))?;
                    let lim = gains.integral_limit;
                    *integral = (*integral + (r.pos - measured.pos) * ctrl_dt).map(|c| c.clamp(-lim, lim));
                    let d = input_error(&u, r, &delta_r);
                    du = [d[0], d[1], d[2], d[3]];
                    u
                }
            };
            let c1 = match &cfg.controller {
                ControllerConfig::Lqr(s) => s.c1,
                _ => default_c1(),
            };
            xi_int += (err.xi.vel + err.xi.pos * c1) * ctrl_dt;
            input = input.saturated();
        }

        let err_p = (r.pos - state.pos).norm();
        let err_v = (r.vel - state.vel).norm();
        let err_th = state.rot.transpose().compose(&r.rot).angle();
        let ypr = state.rot.yaw_pitch_roll();
        samples.push(Sample {
            t,
            pos: state.pos.into(),
            vel: state.vel.into(),
            ypr: ypr.into(),
            omega: state.omega.into(),
            thrust: input.thrust,
            du,
            err_p,
            err_v,
            err_th,
            qp_iters: qp_stats.0,
            qp_kkt: qp_stats.1,
        });
        if !(err_p <= DIVERGENCE_THRESHOLD) {
            status = RunStatus::Diverged { t };
            break;
        }
        if k + 1 < refs.len() {
            state = step(&state, &input, &plant, &cfg.plant_mode, cfg.dt);
        }
    }

    let summary = summarize(&samples);
    Ok(RunResult {
        name: cfg.name.clone(),
        controller: cfg.controller.name().to_string(),
        scenario: cfg.scenario(),
        status,
        samples,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub controller: String,
    pub diverged: bool,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Ratio of `numerator`'s metrics to `denominator`'s.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseRatio {
    pub numerator: String,
    pub denominator: String,
    pub pos_err_ss: f64,
    pub vel_err_ss: f64,
    pub att_err_ss: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// One entry per unordered pair `(i, j)`, `i < j`, as row `i` over row `j`.
    pub ratios: Vec<PairwiseRatio>,
}

pub fn compare(results: &[RunResult]) -> Result<ComparisonTable, SimError> {
    if results.len() < 2 {
        return Err(SimError::TooFewRuns);
    }
    let base = &results[0].scenario;
    if let Some(other) = results.iter().find(|r| &r.scenario != base) {
        return Err(SimError::ScenarioMismatch(format!(
            "`{}` and `{}` were run on different scenarios",
            results[0].name, other.name
        )));
    }
    let rows: Vec<ComparisonRow> = results
        .iter()
        .map(|r| ComparisonRow {
            name: r.name.clone(),
            controller: r.controller.clone(),
            diverged: r.diverged(),
            summary: r.summary,
        })
        .collect();
    let mut ratios = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let (a, b) = (&rows[i].summary, &rows[j].summary);
            ratios.push(PairwiseRatio {
                numerator: rows[i].name.clone(),
                denominator: rows[j].name.clone(),
                pos_err_ss: a.pos_err_ss / b.pos_err_ss,
                vel_err_ss: a.vel_err_ss / b.vel_err_ss,
                att_err_ss: a.att_err_ss / b.att_err_ss,
                rmse: a.rmse / b.rmse,
            });
        }
    }
    Ok(ComparisonTable { rows, ratios })
}

impl ComparisonTable {
    pub fn ratio(&self, numerator: &str, denominator: &str) -> Option<&PairwiseRatio> {
        self.ratios
            .iter()
            .find(|r| r.numerator == numerator && r.denominator == denominator)
    }

    /// Summary rows followed by the ratio rows, in one CSV with a `kind`
    /// column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "kind", "name", "controller", "diverged", "pos_err_ss", "vel_err_ss", "att_err_ss", "pos_err_peak", "rmse",
        ])?;
        for r in &self.rows {
            let s = &r.summary;
            out.write_record([
                "run".to_string(),
                r.name.clone(),
                r.controller.clone(),
                r.diverged.to_string(),
                fmt_f64(s.pos_err_ss),
                fmt_f64(s.vel_err_ss),
                fmt_f64(s.att_err_ss),
                fmt_f64(s.pos_err_peak),
                fmt_f64(s.rmse),
            ])?;
        }
        for r in &self.ratios {
            out.write_record([
                "ratio".to_string(),
                format!("{}/{}", r.numerator, r.denominator),
                String::new(),
                String::new(),
                fmt_f64(r.pos_err_ss),
                fmt_f64(r.vel_err_ss),
                fmt_f64(r.att_err_ss),
                String::new(),
                fmt_f64(r.rmse),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
