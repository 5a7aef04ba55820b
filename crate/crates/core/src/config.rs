//! Simulation grid configuration and its TOML file format.
//!
//! ```toml
//! instances = [[0.5, 0.5], [0.1, 0.5]]   # (mu0, mu1) pairs
//! horizons = [100, 200, 500]             # strictly ascending
//! algorithms = ["optrack", "clip_sdt"]
//! replications = 50000                   # optional
//! delta = 0.05                           # optional
//! master_seed = 0                        # optional
//! boundary_time_mode = "arm_count"       # optional: arm_count | total_time
//! clip_exponent = 0.3333333333333333     # optional
//! ```

use std::path::Path;

use toml::{Table, Value};

use crate::concentration::CsParams;
use crate::error::{Error, Result};
use crate::policies::{Algorithm, BoundaryTimeMode, PolicySettings};

pub const DEFAULT_REPLICATIONS: u64 = 50_000;
pub const FULL_FIDELITY_REPLICATIONS: u64 = 500_000;
pub const DEFAULT_DELTA: f64 = 0.05;

const KEYS: [&str; 8] = [
    "instances",
    "horizons",
    "algorithms",
    "replications",
    "delta",
    "master_seed",
    "boundary_time_mode",
    "clip_exponent",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub instances: Vec<(f64, f64)>,
    pub horizons: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    pub replications: u64,
    pub delta: f64,
    pub master_seed: u64,
    pub boundary_time_mode: BoundaryTimeMode,
    pub clip_exponent: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            instances: Vec::new(),
            horizons: Vec::new(),
            algorithms: Vec::new(),
            replications: DEFAULT_REPLICATIONS,
            delta: DEFAULT_DELTA,
            master_seed: 0,
            boundary_time_mode: BoundaryTimeMode::ArmCount,
            clip_exponent: 1.0 / 3.0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(Error::config("instances", "at least one instance is required"));
        }
        for &(mu0, mu1) in &self.instances {
            if !(0.0..=1.0).contains(&mu0) || !(0.0..=1.0).contains(&mu1) {
                return Err(Error::config("instances", format!("means ({mu0}, {mu1}) must lie in [0, 1]")));
            }
        }
        if self.horizons.is_empty() {
            return Err(Error::config("horizons", "at least one horizon is required"));
        }
        if self.horizons[0] == 0 {
            return Err(Error::config("horizons", "horizons must be positive"));
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("horizons", "horizons must be strictly ascending"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithms", "at least one algorithm is required"));
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].contains(a) {
                return Err(Error::config("algorithms", format!("`{a}` is listed twice")));
            }
        }
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", format!("{} is outside (0, 1)", self.delta)));
        }
        if !(self.clip_exponent.is_finite() && self.clip_exponent > 0.0) {
            return Err(Error::config("clip_exponent", format!("{} must be positive", self.clip_exponent)));
        }
        Ok(())
    }

    pub fn policy_settings(&self) -> Result<PolicySettings> {
        Ok(PolicySettings {
            cs: CsParams::new(self.delta).map_err(|e| Error::config("delta", e.to_string()))?,
            boundary_mode: self.boundary_time_mode,
            clip_exponent: self.clip_exponent,
        })
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, ParseFailure> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| ParseFailure::Syntax(e.to_string()))?;
        Self::from_table(&table).map_err(ParseFailure::Invalid)
    }

    fn from_table(table: &Table) -> Result<Self> {
        if let Some(key) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::config(key.as_str(), "unknown key"));
        }
        let defaults = Self::default();
        let cfg = Self {
            instances: required(table, "instances", |v| {
                array(v)?.iter().map(instance).collect::<std::result::Result<_, _>>()
            })?,
            horizons: required(table, "horizons", |v| array(v)?.iter().map(positive_int).collect())?,
            algorithms: required(table, "algorithms", |v| {
                array(v)?
                    .iter()
                    .map(|a| a.as_str().ok_or("expected a string")?.parse::<Algorithm>())
                    .collect()
            })?,
            replications: optional(table, "replications", positive_int)?.unwrap_or(defaults.replications),
            delta: optional(table, "delta", float)?.unwrap_or(defaults.delta),
            master_seed: optional(table, "master_seed", nonneg_int)?.unwrap_or(defaults.master_seed),
            boundary_time_mode: optional(table, "boundary_time_mode", |v| match v.as_str() {
                Some("arm_count") => Ok(BoundaryTimeMode::ArmCount),
                Some("total_time") => Ok(BoundaryTimeMode::TotalTime),
                _ => Err("expected \"arm_count\" or \"total_time\"".to_owned()),
            })?
            .unwrap_or(defaults.boundary_time_mode),
            clip_exponent: optional(table, "clip_exponent", float)?.unwrap_or(defaults.clip_exponent),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialises every field, defaults included.
    pub fn to_toml_string(&self) -> Result<String> {
        let int = |key: &str, x: u64| {
            i64::try_from(x)
                .map(Value::Integer)
                .map_err(|_| Error::config(key, format!("{x} does not fit in a TOML integer")))
        };
        let mut t = Table::new();
        t.insert(
            "instances".into(),
            Value::Array(
                self.instances
                    .iter()
                    .map(|&(a, b)| Value::Array(vec![Value::Float(a), Value::Float(b)]))
                    .collect(),
            ),
        );
        t.insert(
            "horizons".into(),
            Value::Array(self.horizons.iter().map(|&h| int("horizons", h)).collect::<Result<_>>()?),
        );
        t.insert(
            "algorithms".into(),
            Value::Array(self.algorithms.iter().map(|a| Value::String(a.name().into())).collect()),
        );
        t.insert("replications".into(), int("replications", self.replications)?);
        t.insert("delta".into(), Value::Float(self.delta));
        t.insert("master_seed".into(), int("master_seed", self.master_seed)?);
        let mode = match self.boundary_time_mode {
            BoundaryTimeMode::ArmCount => "arm_count",
            BoundaryTimeMode::TotalTime => "total_time",
        };
        t.insert("boundary_time_mode".into(), Value::String(mode.into()));
        t.insert("clip_exponent".into(), Value::Float(self.clip_exponent));
        toml::to_string(&t).map_err(|e| Error::config("config", e.to_string()))
    }
}

#[derive(Debug)]
pub enum ParseFailure {
    Syntax(String),
    Invalid(Error),
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<SimulationConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SimulationConfig::from_toml_str(&text).map_err(|f| match f {
        ParseFailure::Syntax(message) => Error::ConfigSyntax {
            path: path.to_owned(),
            message,
        },
        ParseFailure::Invalid(e) => e,
    })
}

type FieldResult<T> = std::result::Result<T, String>;

fn required<T>(table: &Table, key: &str, f: impl Fn(&Value) -> FieldResult<T>) -> Result<T> {
    let v = table.get(key).ok_or_else(|| Error::config(key, "missing required key"))?;
    f(v).map_err(|m| Error::config(key, m))
}

fn optional<T>(table: &Table, key: &str, f: impl Fn(&Value) -> FieldResult<T>) -> Result<Option<T>> {
    table.get(key).map(|v| f(v).map_err(|m| Error::config(key, m))).transpose()
}

fn array(v: &Value) -> FieldResult<&Vec<Value>> {
    v.as_array().ok_or_else(|| "expected an array".to_owned())
}

fn float(v: &Value) -> FieldResult<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err("expected a number".to_owned()),
    }
}

fn nonneg_int(v: &Value) -> FieldResult<u64> {
    v.as_integer()
        .and_then(|i| u64::try_from(i).ok())
        .ok_or_else(|| "expected a non-negative integer".to_owned())
}

fn positive_int(v: &Value) -> FieldResult<u64> {
    match nonneg_int(v)? {
        0 => Err("expected a positive integer".to_owned()),
        n => Ok(n),
    }
}

fn instance(v: &Value) -> FieldResult<(f64, f64)> {
    match array(v)?.as_slice() {
        [a, b] => Ok((float(a)?, float(b)?)),
        _ => Err("each instance must be a [mu0, mu1] pair".to_owned()),
    }
}
