use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoquad::error_model::{validate_linearization, ModelConfig};
use geoquad::reference::table;
use geoquad::sim::{compare, run, ExperimentConfig, RunResult, SimError};
use rayon::prelude::*;
use serde_json::Value;

mod config;

use config::{apply_overrides, experiment_from_value, read_json, suite_from_value, ConfigError};

#[derive(Parser)]
#[command(name = "geoquad", about = "Geometric quadrotor control experiments", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment (or suite) config, JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "GEOQUAD_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides `noise.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// `dotted.key=value`, applied after the file is parsed. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn all_overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        if let Some(seed) = self.seed {
            o.push(format!("noise.seed={seed}"));
        }
        o
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV and summary.
    Run(Common),
    /// Run a suite of controllers on one scenario and write a comparison table.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Maximum concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run one experiment per value of a config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config key to vary.
        #[arg(long)]
        key: String,
        /// Comma-separated values; each is read as JSON when possible.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Finite-difference check of the linearized error model on the config's
    /// reference.
    ValidateModel {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Check every `stride`-th step.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Exit 1 when the residual exceeds this.
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// Print the version.
    Version,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config { .. } | SimError::ScenarioMismatch(_) | SimError::TooFewRuns => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Writes through a temp file in the same directory, then renames.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<(), Failure>) -> Result<(), Failure> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_failure(dir, e))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush().map_err(|e| io_failure(path, e))?;
    }
    tmp.persist(path).map_err(|e| io_failure(path, e.error))?;
    Ok(())
}

fn write_run(out: &Path, result: &RunResult) -> Result<(), Failure> {
    write_atomic(&out.join(format!("{}.csv", result.name)), |w| Ok(result.write_csv(w)?))?;
    write_atomic(&out.join(format!("{}.summary.json", result.name)), |w| {
        writeln!(w, "{}", result.summary_json()).map_err(|e| Failure::Runtime(e.to_string()))
    })
}

fn load_experiment(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut doc = read_json(&common.config)?;
    apply_overrides(&mut doc, &common.all_overrides())?;
    Ok(experiment_from_value(doc)?)
}

fn report(result: &RunResult) {
    let s = &result.summary;
    println!(
        "{:<16} {:<8} {:<10} pos_ss={:.4e} m  vel_ss={:.4e} m/s  att_ss={:.3} deg  pos_peak={:.4e} m",
        result.name,
        result.controller,
        if result.diverged() { "DIVERGED" } else { "ok" },
        s.pos_err_ss,
        s.vel_err_ss,
        s.att_err_ss,
        s.pos_err_peak,
    );
}

fn run_all(cfgs: &[ExperimentConfig], jobs: usize) -> Result<Vec<RunResult>, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let results: Result<Vec<RunResult>, SimError> = pool.install(|| cfgs.par_iter().map(run).collect());
    Ok(results?)
}

fn cmd_run(common: &Common) -> Result<bool, Failure> {
    let cfg = load_experiment(common)?;
    let result = run(&cfg)?;
    write_run(&common.out, &result)?;
    report(&result);
    Ok(!result.diverged())
}

fn cmd_compare(common: &Common, jobs: usize) -> Result<bool, Failure> {
    let doc = read_json(&common.config)?;
    let (name, cfgs) = suite_from_value(doc, &common.all_overrides())?;
    let results = run_all(&cfgs, jobs)?;
    let table = compare(&results)?;
    for r in &results {
        write_run(&common.out, r)?;
        report(r);
    }
    write_atomic(&common.out.join(format!("{name}.csv")), |w| Ok(table.write_csv(w)?))?;
    for r in &table.ratios {
        println!(
            "ratio {}/{}: pos_ss={:.3} vel_ss={:.3} att_ss={:.3}",
            r.numerator, r.denominator, r.pos_err_ss, r.vel_err_ss, r.att_err_ss
        );
    }
    Ok(results.iter().all(|r| !r.diverged()))
}

fn cmd_sweep(common: &Common, key: &str, values: &[String], jobs: usize) -> Result<bool, Failure> {
    let base = read_json(&common.config)?;
    let mut cfgs = Vec::with_capacity(values.len());
    for v in values {
        let mut doc = base.clone();
        let mut overrides = common.all_overrides();
        overrides.push(format!("{key}={v}"));
        apply_overrides(&mut doc, &overrides)?;
        let name = doc.get("name").and_then(Value::as_str).unwrap_or("experiment").to_string();
        let label: String = v.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
        config::apply_override(&mut doc, "name", Value::String(format!("{name}_{key}={label}")))?;
        cfgs.push(experiment_from_value(doc).map_err(|e| Failure::Config(format!("{key}={v}: {e}")))?);
    }
    let results = run_all(&cfgs, jobs)?;
    for r in &results {
        write_run(&common.out, r)?;
        report(r);
    }
    write_atomic(&common.out.join("sweep.csv"), |w| {
        let mut out = String::from("value,name,diverged,pos_err_ss,vel_err_ss,att_err_ss,pos_err_peak,rmse\n");
        for (v, r) in values.iter().zip(&results) {
            let s = &r.summary;
            out.push_str(&format!(
                "\"{}\",{},{},{},{},{},{},{}\n",
                v.replace('"', "\"\""),
                r.name,
                r.diverged(),
                s.pos_err_ss,
                s.vel_err_ss,
                s.att_err_ss,
                s.pos_err_peak,
                s.rmse
            ));
        }
        w.write_all(out.as_bytes()).map_err(|e| Failure::Runtime(e.to_string()))
    })?;
    Ok(results.iter().all(|r| !r.diverged()))
}

fn cmd_validate(common: &Common, eps: f64, stride: usize, threshold: f64) -> Result<bool, Failure> {
    let cfg = load_experiment(common)?;
    if !(eps > 0.0) {
        return Err(Failure::Config(format!("invalid `--eps`: must be > 0, got {eps}")));
    }
    let refs = table(&cfg.trajectory, &cfg.plant, cfg.dt, cfg.duration).map_err(|e| Failure::Config(format!("invalid config `trajectory`: {e}")))?;
    let model_cfg = ModelConfig {
        drag_in_model: cfg.mismatch.drag_in_model,
        discretization: cfg.discretization,
        ..ModelConfig::new(cfg.dt)
    };
    let started = std::time::Instant::now();
    let report = validate_linearization(&refs, &cfg.plant, &model_cfg, eps, stride).map_err(|e| Failure::Config(e.to_string()))?;
    let ok = report.max_relative_residual < threshold;
    println!(
        "max relative residual {:.3e} at step {} direction {} ({} steps, {:.2} s) {}",
        report.max_relative_residual,
        report.worst_step,
        report.worst_direction,
        report.steps_checked,
        started.elapsed().as_secs_f64(),
        if ok { "PASS" } else { "FAIL" }
    );
    write_atomic(&common.out.join(format!("{}.validation.json", cfg.name)), |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(|e| Failure::Runtime(e.to_string()))?;
        writeln!(w).map_err(|e| Failure::Runtime(e.to_string()))
    })?;
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Compare { common, jobs } => cmd_compare(common, *jobs),
        Command::Sweep {
            common,
            key,
            values,
            jobs,
        } => cmd_sweep(common, key, values, *jobs),
        Command::ValidateModel {
            common,
            eps,
            stride,
            threshold,
        } => cmd_validate(common, *eps, *stride, *threshold),
        Command::Version => {
            println!("geoquad {}", env!("CARGO_PKG_VERSION"));
            Ok(true)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
