//! Effective run configuration: defaults, then a config file, then flags.
//!
//! Config files are either `key = value` lines or a JSON document previously
//! written by this tool (its `config` object is read back). Every value that a
//! command reads is recorded in canonical typed form and echoed into the
//! output, so re-running an emitted config repeats the run exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use matdist_core::Error;
use nalgebra::Vector3;
use serde_json::{Map, Number, Value};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    ModelParse(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 64,
            CliError::ModelParse(_) => 65,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::ModelParse(m) => write!(f, "model parse: {m}"),
            CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } => CliError::ModelParse(e.to_string()),
            Error::Tolerances(_)
            | Error::Sampler(_)
            | Error::ModelParams(_)
            | Error::UnknownModel(_)
            | Error::Grid(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Keys accepted by every command.
pub const SHARED_KEYS: &[&str] = &[
    "model",
    "mdl",
    "params",
    "tol_rank",
    "tol_residual",
    "fd_step_rel",
    "fd_step_abs",
    "seed",
    "k_init",
    "k_max",
    "det_min",
    "cond_max",
    "mode",
    "rho",
    "cloud",
    "format",
    "svg",
    "threads",
    "out",
];

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, Value>,
    params: BTreeMap<String, Value>,
    echo: Map<String, Value>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    /// Read a config file for `command`.
    pub fn from_file(path: &Path, command: &str) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        if text.trim_start().starts_with('{') {
            Self::from_json(&text, command)
        } else {
            Self::from_text(&text)
        }
    }

    fn from_text(text: &str) -> CliResult<Self> {
        let mut s = Settings::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected `key = value`", n + 1)))?;
            s.set(&normalize(k), Value::String(v.trim().to_string()))?;
        }
        Ok(s)
    }

    fn from_json(text: &str, command: &str) -> CliResult<Self> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| usage(format!("config is not valid JSON: {e}")))?;
        if let Some(c) = doc.get("command").and_then(Value::as_str) {
            if c != command {
                return Err(usage(format!(
                    "config was written by `{c}`, not `{command}`"
                )));
            }
        }
        let obj = match doc.get("config") {
            Some(Value::Object(o)) => o,
            _ => doc
                .as_object()
                .ok_or_else(|| usage("config JSON must be an object"))?,
        };
        let mut s = Settings::default();
        for (k, v) in obj {
            if v.is_null() {
                continue;
            }
            s.set(&normalize(k), v.clone())?;
        }
        Ok(s)
    }

    fn set(&mut self, key: &str, value: Value) -> CliResult<()> {
        if let Some(name) = key.strip_prefix("param.") {
            self.params.insert(name.to_string(), value);
        } else if key == "params" {
            match value {
                Value::Object(o) => self.params.extend(o),
                _ => return Err(usage("`params` must be an object")),
            }
        } else {
            self.values.insert(key.to_string(), value);
        }
        Ok(())
    }

    /// Override with a flag value.
    pub fn flag(&mut self, key: &str, value: Option<String>) -> CliResult<()> {
        match value {
            Some(v) => self.set(key, Value::String(v)),
            None => Ok(()),
        }
    }

    /// `--param name=value` overrides.
    pub fn param_flags(&mut self, items: &[String]) -> CliResult<()> {
        for item in items {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| usage(format!("--param expects NAME=VALUE, got `{item}`")))?;
            self.params
                .insert(k.trim().to_string(), Value::String(v.trim().to_string()));
        }
        Ok(())
    }

    pub fn check_keys(&self, extra: &[&str]) -> CliResult<()> {
        let allowed: BTreeSet<&str> = SHARED_KEYS.iter().chain(extra).copied().collect();
        match self.values.keys().find(|k| !allowed.contains(k.as_str())) {
            Some(k) => Err(usage(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn echo(&self) -> Value {
        Value::Object(self.echo.clone())
    }

    fn record(&mut self, key: &str, v: Value) {
        self.echo.insert(key.to_string(), v);
    }

    fn raw(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Read without echoing (output routing only).
    pub fn unechoed_str(&self, key: &str) -> CliResult<Option<String>> {
        self.raw(key).map(|v| as_string(key, v)).transpose()
    }

    pub fn str_opt(&mut self, key: &str) -> CliResult<Option<String>> {
        let v = self.raw(key).map(|v| as_string(key, v)).transpose()?;
        if let Some(s) = &v {
            self.record(key, Value::String(s.clone()));
        }
        Ok(v)
    }

    pub fn str_or(&mut self, key: &str, default: &str) -> CliResult<String> {
        let v = self
            .raw(key)
            .map(|v| as_string(key, v))
            .transpose()?
            .unwrap_or_else(|| default.to_string());
        self.record(key, Value::String(v.clone()));
        Ok(v)
    }

    pub fn str_req(&mut self, key: &str) -> CliResult<String> {
        self.str_opt(key)?
            .ok_or_else(|| usage(format!("missing required `{}`", key.replace('_', "-"))))
    }

    pub fn f64_opt(&mut self, key: &str) -> CliResult<Option<f64>> {
        let v = self.raw(key).map(|v| as_f64(key, v)).transpose()?;
        if let Some(x) = v {
            self.record(key, num(x));
        }
        Ok(v)
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> CliResult<f64> {
        let v = self
            .raw(key)
            .map(|v| as_f64(key, v))
            .transpose()?
            .unwrap_or(default);
        self.record(key, num(v));
        Ok(v)
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> CliResult<u64> {
        let v = match self.raw(key) {
            None => default,
            Some(Value::Number(n)) => n
                .as_u64()
                .ok_or_else(|| usage(format!("`{key}` must be a non-negative integer")))?,
            Some(other) => {
                let s = as_string(key, other)?;
                s.parse().map_err(|_| {
                    usage(format!("`{key}` must be a non-negative integer, got `{s}`"))
                })?
            }
        };
        self.record(key, Value::Number(v.into()));
        Ok(v)
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> CliResult<usize> {
        let v = self.u64_or(key, default as u64)?;
        usize::try_from(v).map_err(|_| usage(format!("`{key}` is too large")))
    }

    /// A list of numbers given as a JSON array or a comma-separated string.
    pub fn list_opt(&mut self, key: &str) -> CliResult<Option<Vec<f64>>> {
        let v = match self.raw(key) {
            None => None,
            Some(Value::Array(items)) => Some(
                items
                    .iter()
                    .map(|x| as_f64(key, x))
                    .collect::<CliResult<Vec<f64>>>()?,
            ),
            Some(Value::Number(n)) => Some(vec![n.as_f64().expect("finite JSON number")]),
            Some(Value::String(s)) => Some(
                s.split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| usage(format!("bad number `{}` in `{key}`", p.trim())))
                    })
                    .collect::<CliResult<Vec<f64>>>()?,
            ),
            Some(_) => return Err(usage(format!("`{key}` must be a list of numbers"))),
        };
        if let Some(xs) = &v {
            self.record(key, Value::Array(xs.iter().map(|x| num(*x)).collect()));
        }
        Ok(v)
    }

    pub fn vec3_opt(&mut self, key: &str) -> CliResult<Option<Vector3<f64>>> {
        match self.list_opt(key)? {
            None => Ok(None),
            Some(xs) if xs.len() == 3 => Ok(Some(Vector3::new(xs[0], xs[1], xs[2]))),
            Some(xs) => Err(usage(format!("`{key}` needs 3 numbers, got {}", xs.len()))),
        }
    }

    pub fn vec3_req(&mut self, key: &str) -> CliResult<Vector3<f64>> {
        self.vec3_opt(key)?
            .ok_or_else(|| usage(format!("missing required `{}`", key.replace('_', "-"))))
    }

    pub fn vec3_or(&mut self, key: &str, default: [f64; 3]) -> CliResult<Vector3<f64>> {
        match self.vec3_opt(key)? {
            Some(v) => Ok(v),
            None => {
                self.record(key, Value::Array(default.iter().map(|x| num(*x)).collect()));
                Ok(Vector3::from(default))
            }
        }
    }

    /// Model parameters, echoed as an object when present.
    pub fn params(&mut self) -> CliResult<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.params {
            out.insert(k.clone(), as_f64(&format!("param.{k}"), v)?);
        }
        if !out.is_empty() {
            let obj = out.iter().map(|(k, v)| (k.clone(), num(*v))).collect();
            self.record("params", Value::Object(obj));
        }
        Ok(out)
    }
}

fn num(x: f64) -> Value {
    Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn as_string(key: &str, v: &Value) -> CliResult<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(usage(format!("`{key}` must be a string"))),
    }
}

fn as_f64(key: &str, v: &Value) -> CliResult<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    x.filter(|x| x.is_finite())
        .ok_or_else(|| usage(format!("`{key}` must be a finite number")))
}
