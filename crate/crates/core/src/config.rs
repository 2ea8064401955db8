//! Run configuration.
//!
//! A config is a TOML document of flat keys (dotted keys such as
//! `mu_in.mean` are allowed and equivalent to nested tables). Missing keys
//! take the reference values, unknown keys are rejected, and `key=value`
//! overrides are applied on top before validation.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::harness::{GridSpec, Scenario};
use crate::measure::Measure;
use crate::model::ModelParams;
use crate::ode::SolverOptions;

/// Particle counts of the default Monte-Carlo sweep.
pub fn default_n_values() -> Vec<usize> {
    (2..=11).map(|k| 1usize << k).collect()
}

fn defaults() -> BTreeMap<String, Value> {
    let f = |x: f64| Value::Float(x);
    let i = |x: i64| Value::Integer(x);
    BTreeMap::from([
        ("M_r".into(), f(20.0)),
        ("M_q_total".into(), f(10.0)),
        ("gamma_r".into(), f(1.0)),
        ("gamma_q_total".into(), f(1.0)),
        ("G_r".into(), f(-1.0)),
        ("N_real".into(), f(250.0)),
        ("N".into(), i(250)),
        ("r_in".into(), f(1.0)),
        ("s_in".into(), f(0.0)),
        ("mu_in.kind".into(), Value::String("gaussian".into())),
        ("mu_in.mean".into(), f(-2.0)),
        ("mu_in.var".into(), f(1.0)),
        ("t_end".into(), f(60.0)),
        ("seed".into(), i(0)),
        ("solver.rtol".into(), f(1e-8)),
        ("solver.atol".into(), f(1e-8)),
        ("solver.max_step".into(), f(f64::INFINITY)),
        ("solver.max_steps".into(), i(1_000_000)),
        ("solver.samples".into(), i(601)),
        ("grid.lo".into(), f(-5.0)),
        ("grid.hi".into(), f(7.0)),
        ("grid.n_pts".into(), i(101)),
        ("mc.N_values".into(), Value::Array(default_n_values().into_iter().map(|n| i(n as i64)).collect())),
        ("mc.n_samples".into(), i(100)),
    ])
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config { key: key.into(), reason: reason.into() }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Monte-Carlo sweep settings.
#[derive(Debug, Clone, PartialEq)]
pub struct McSettings {
    pub n_values: Vec<usize>,
    pub n_samples: usize,
}

/// A validated configuration together with the raw key/value pairs it was
/// built from.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub mc: McSettings,
    entries: BTreeMap<String, Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::build(defaults()).expect("default config is valid")
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::load(Some(text), &[])
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Parses `text` (when given), applies `key=value` overrides and validates.
    pub fn load(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut entries = defaults();
        if let Some(text) = text {
            let table: Table = text.parse().map_err(|e: toml::de::Error| config_err("<file>", e.message()))?;
            let mut flat = Vec::new();
            flatten("", &table, &mut flat);
            for (k, v) in flat {
                set_entry(&mut entries, &k, v)?;
            }
        }
        for o in overrides {
            let (k, raw) = o
                .split_once('=')
                .ok_or_else(|| config_err(o, "override must have the form key=value"))?;
            let (k, raw) = (k.trim(), raw.trim());
            // accept bare strings as well as TOML literals
            let v = format!("v = {raw}")
                .parse::<Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| Value::String(raw.to_string()));
            set_entry(&mut entries, k, v)?;
        }
        Self::build(entries)
    }

    /// Flat `key = value` listing of the effective configuration.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// The effective configuration as a TOML document that loads back to the
    /// same config.
    pub fn to_toml(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {}\n", render(v))).collect()
    }

    fn build(entries: BTreeMap<String, Value>) -> Result<Self> {
        let get = Getter(&entries);
        let n_real = get.float("N_real")?;
        if !(n_real > 0.0) {
            return Err(config_err("N_real", format!("must be > 0, got {n_real}")));
        }
        let n = get.count("N")?;
        let params = ModelParams::scalar(
            get.float("M_r")?,
            get.float("M_q_total")? / n_real,
            get.float("gamma_r")?,
            get.float("gamma_q_total")? / n_real,
            get.float("G_r")?,
            n_real,
            n,
        )
        .map_err(|e| config_err("M_r/M_q_total/gamma_r/gamma_q_total/G_r", e.to_string()))?;

        let kind = get.string("mu_in.kind")?;
        if kind != "gaussian" {
            return Err(config_err("mu_in.kind", format!("unknown kind `{kind}` (expected `gaussian`)")));
        }
        let mean = get.float("mu_in.mean")?;
        let var = get.float("mu_in.var")?;
        if !(var >= 0.0) || !var.is_finite() {
            return Err(config_err("mu_in.var", format!("variance must be finite and >= 0, got {var}")));
        }
        let mu_in = Measure::normal(mean, var).map_err(|e| config_err("mu_in.mean", e.to_string()))?;

        let t_end = get.float("t_end")?;
        if !(t_end >= 0.0) || !t_end.is_finite() {
            return Err(config_err("t_end", format!("must be finite and >= 0, got {t_end}")));
        }
        let solver = SolverOptions {
            rtol: get.positive("solver.rtol")?,
            atol: get.positive("solver.atol")?,
            max_step: get.positive("solver.max_step")?,
            max_steps: get.count("solver.max_steps")?,
        };
        let samples = get.count("solver.samples")?;
        if samples < 2 {
            return Err(config_err("solver.samples", "need at least 2 output samples"));
        }
        let grid = GridSpec { lo: get.float("grid.lo")?, hi: get.float("grid.hi")?, n_pts: get.count("grid.n_pts")? };
        if !(grid.lo < grid.hi) {
            return Err(config_err("grid.lo", format!("need grid.lo < grid.hi, got [{}, {}]", grid.lo, grid.hi)));
        }
        if grid.n_pts < 3 {
            return Err(config_err("grid.n_pts", "need at least 3 grid points"));
        }
        let n_values = get.counts("mc.N_values")?;
        if n_values.is_empty() {
            return Err(config_err("mc.N_values", "must not be empty"));
        }
        let n_samples = get.count("mc.n_samples")?;
        if n_samples < 2 {
            return Err(config_err("mc.n_samples", "need at least 2 samples"));
        }
        let seed = get.int("seed")?;
        if seed < 0 {
            return Err(config_err("seed", "must be nonnegative"));
        }

        let scenario = Scenario {
            params,
            r_in: DVector::from_element(1, get.float("r_in")?),
            s_in: DVector::from_element(1, get.float("s_in")?),
            mu_in,
            t_end,
            samples,
            solver,
            grid,
            seed: seed as u64,
        };
        Ok(Self { scenario, mc: McSettings { n_values, n_samples }, entries })
    }
}

fn set_entry(entries: &mut BTreeMap<String, Value>, key: &str, v: Value) -> Result<()> {
    match entries.get_mut(key) {
        Some(slot) => {
            *slot = v;
            Ok(())
        }
        None => Err(config_err(key, "unknown key")),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Float(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
        Value::Float(x) if x.is_nan() => "nan".into(),
        Value::Float(x) => format!("{x:?}"),
        Value::Array(a) => format!("[{}]", a.iter().map(render).collect::<Vec<_>>().join(", ")),
        other => other.to_string(),
    }
}

struct Getter<'a>(&'a BTreeMap<String, Value>);

impl Getter<'_> {
    fn value(&self, key: &str) -> &Value {
        &self.0[key]
    }

    fn float(&self, key: &str) -> Result<f64> {
        let x = match self.value(key) {
            Value::Float(x) => *x,
            Value::Integer(i) => *i as f64,
            other => return Err(config_err(key, format!("expected a number, got `{}`", render(other)))),
        };
        if x.is_nan() {
            return Err(config_err(key, "must not be NaN"));
        }
        Ok(x)
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let x = self.float(key)?;
        if !(x > 0.0) {
            return Err(config_err(key, format!("must be > 0, got {x}")));
        }
        Ok(x)
    }

    fn int(&self, key: &str) -> Result<i64> {
        match self.value(key) {
            Value::Integer(i) => Ok(*i),
            other => Err(config_err(key, format!("expected an integer, got `{}`", render(other)))),
        }
    }

    fn count(&self, key: &str) -> Result<usize> {
        let i = self.int(key)?;
        if i < 1 {
            return Err(config_err(key, format!("must be >= 1, got {i}")));
        }
        Ok(i as usize)
    }

    fn counts(&self, key: &str) -> Result<Vec<usize>> {
        match self.value(key) {
            Value::Array(a) => a
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 1 => Ok(*i as usize),
                    other => Err(config_err(key, format!("entries must be positive integers, got `{}`", render(other)))),
                })
                .collect(),
            other => Err(config_err(key, format!("expected an array, got `{}`", render(other)))),
        }
    }

    fn string(&self, key: &str) -> Result<&str> {
        match self.value(key) {
            Value::String(s) => Ok(s),
            other => Err(config_err(key, format!("expected a string, got `{}`", render(other)))),
        }
    }
}
