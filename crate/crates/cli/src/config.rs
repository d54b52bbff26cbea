//! Config files, `key=value` overrides and scenario suites.

use std::path::Path;

use geoquad::sim::ExperimentConfig;
use serde::Deserialize;
use serde_json::{Map, Value};

/// A config problem, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

pub fn read_json(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

/// Splits `a.b.c=value`. The value is read as JSON when it parses, and as a
/// plain string otherwise.
pub fn parse_override(spec: &str) -> Result<(String, Value), ConfigError> {
    let Some((key, raw)) = spec.split_once('=') else {
        return err(format!("override `{spec}` is not of the form key=value"));
    };
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return err(format!("override `{spec}` has an empty key segment"));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((key.to_string(), value))
}

/// Sets `value` at the dotted path `key`, creating missing objects on the way.
pub fn apply_override(doc: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut node = doc;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let here = segments[..=i].join(".");
        let obj = match node {
            Value::Object(map) => map,
            _ => return err(format!("cannot set `{key}`: `{}` is not an object", segments[..i].join("."))),
        };
        if i + 1 == segments.len() {
            obj.insert(seg.to_string(), value);
            return Ok(());
        }
        node = obj.entry(seg.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if !node.is_object() {
            return err(format!("cannot set `{key}`: `{here}` is not an object"));
        }
    }
    Ok(())
}

pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), ConfigError> {
    for o in overrides {
        let (k, v) = parse_override(o)?;
        apply_override(doc, &k, v)?;
    }
    Ok(())
}

/// Recursively merges `patch` into `base`; objects merge key by key, any other
/// value replaces.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Parses and validates an experiment. Errors name the offending key.
pub fn experiment_from_value(doc: Value) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = serde_json::from_value(doc).map_err(|e| ConfigError(format!("invalid config: {e}")))?;
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

/// A base scenario plus per-run patches, each of which must at least name a
/// controller.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteFile {
    #[serde(default)]
    pub name: Option<String>,
    pub base: Value,
    pub runs: Vec<Value>,
}

/// Expands a suite into its name and validated experiments. Overrides apply
/// to every run.
pub fn suite_from_value(doc: Value, overrides: &[String]) -> Result<(String, Vec<ExperimentConfig>), ConfigError> {
    let suite: SuiteFile = serde_json::from_value(doc).map_err(|e| ConfigError(format!("invalid suite: {e}")))?;
    if suite.runs.len() < 2 {
        return err("suite needs at least two runs to compare");
    }
    let mut out = Vec::with_capacity(suite.runs.len());
    for (i, patch) in suite.runs.iter().enumerate() {
        let mut doc = suite.base.clone();
        merge(&mut doc, patch);
        apply_overrides(&mut doc, overrides)?;
        let cfg = experiment_from_value(doc).map_err(|e| ConfigError(format!("runs[{i}]: {e}")))?;
        out.push(cfg);
    }
    let mut names: Vec<&str> = out.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return err("suite run names must be unique");
    }
    Ok((suite.name.unwrap_or_else(|| "comparison".into()), out))
}
