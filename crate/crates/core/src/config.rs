//! Solver hyperparameters and their flat `key=value` / JSON form.
//!
//! Every field is addressed by a fixed key (`sigma0`, `sigma_min`, `kappa_c`,
//! `kappa_theta`, `theta`, `vartheta`, `gamma1`, `gamma2`, `gamma3`, `eta1`,
//! `eta2`, `eps`, `max_iterations`, `time_limit_seconds`, `backend`,
//! `preconditioner`; plus `eps1`, `eps2` for [`SOConfig`]). Unknown keys are
//! rejected.

use std::fmt;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::stepcomp::{Preconditioner, StepConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Exact,
    Krylov,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Exact => "exact",
            Backend::Krylov => "krylov",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(Backend::Exact),
            "krylov" => Ok(Backend::Krylov),
            other => Err(Error::Config(format!("unknown backend `{other}` (expected exact or krylov)"))),
        }
    }
}

/// Initial regularization weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma0 {
    /// `σ_0 = 1/‖g_0‖`, falling back to `σ_min` when that is not usable.
    InverseGradNorm,
    Fixed(f64),
}

impl Sigma0 {
    /// Resolves the rule for a starting gradient norm; never below `sigma_min`.
    pub fn resolve(self, grad_norm: f64, sigma_min: f64) -> f64 {
        match self {
            Sigma0::InverseGradNorm => {
                let s = 1.0 / grad_norm;
                if grad_norm > 0.0 && s.is_finite() {
                    s.max(sigma_min)
                } else {
                    sigma_min
                }
            }
            Sigma0::Fixed(s) => s.max(sigma_min),
        }
    }
}

impl fmt::Display for Sigma0 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma0::InverseGradNorm => f.write_str("1/|g0|"),
            Sigma0::Fixed(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for Sigma0 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1/|g0|" | "1/‖g0‖" | "inverse-gradient-norm" => Ok(Sigma0::InverseGradNorm),
            other => parse_f64("sigma0", other).map(Sigma0::Fixed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub sigma0: Sigma0,
    pub sigma_min: f64,
    pub kappa_c: f64,
    pub kappa_theta: f64,
    pub theta: f64,
    pub vartheta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eps: f64,
    pub max_iterations: usize,
    pub time_limit_seconds: f64,
    pub backend: Backend,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::default_config(Backend::Exact)
    }
}

/// Keys accepted by [`SolverConfig::set`], in serialization order.
pub const SOLVER_KEYS: &[&str] = &[
    "sigma0",
    "sigma_min",
    "kappa_c",
    "kappa_theta",
    "theta",
    "vartheta",
    "gamma1",
    "gamma2",
    "gamma3",
    "eta1",
    "eta2",
    "eps",
    "max_iterations",
    "time_limit_seconds",
    "backend",
    "preconditioner",
];

impl SolverConfig {
    /// Standard hyperparameters; the exact backend uses `θ = 1, κ_θ = 0` and
    /// the Krylov backend `θ = 1/2, κ_θ = 1`.
    pub fn default_config(backend: Backend) -> Self {
        let (kappa_theta, theta) = match backend {
            Backend::Exact => (0.0, 1.0),
            Backend::Krylov => (1.0, 0.5),
        };
        Self {
            sigma0: Sigma0::InverseGradNorm,
            sigma_min: 1e-8,
            kappa_c: 1e3,
            kappa_theta,
            theta,
            vartheta: 1e4,
            gamma1: 0.5,
            gamma2: 10.0,
            gamma3: 10.0,
            eta1: 1e-4,
            eta2: 0.95,
            eps: 1e-6,
            max_iterations: 5000,
            time_limit_seconds: 3600.0,
            backend,
            preconditioner: Preconditioner::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if let Sigma0::Fixed(s) = self.sigma0 {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("sigma0 must be positive, got {s}"));
            }
        }
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return bad(format!("sigma_min must be positive, got {}", self.sigma_min));
        }
        if !(self.kappa_c >= 1.0 && self.kappa_c.is_finite()) {
            return bad(format!("kappa_c must be >= 1, got {}", self.kappa_c));
        }
        if !(self.kappa_theta >= 0.0 && self.kappa_theta.is_finite()) {
            return bad(format!("kappa_theta must be >= 0, got {}", self.kappa_theta));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad(format!("theta must lie in (0, 1], got {}", self.theta));
        }
        if !(self.vartheta >= 1.0 && self.vartheta.is_finite()) {
            return bad(format!("vartheta must be >= 1, got {}", self.vartheta));
        }
        if !(self.gamma1 > 0.0
            && self.gamma1 < 1.0
            && 1.0 < self.gamma2
            && self.gamma2 <= self.gamma3
            && self.gamma3.is_finite())
        {
            return bad(format!(
                "need 0 < gamma1 < 1 < gamma2 <= gamma3, got {}, {}, {}",
                self.gamma1, self.gamma2, self.gamma3
            ));
        }
        if !(self.eta1 > 0.0 && self.eta1 <= self.eta2 && self.eta2 < 1.0) {
            return bad(format!("need 0 < eta1 <= eta2 < 1, got {}, {}", self.eta1, self.eta2));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad(format!("eps must lie in (0, 1], got {}", self.eps));
        }
        if !(self.time_limit_seconds > 0.0) {
            return bad(format!("time_limit_seconds must be positive, got {}", self.time_limit_seconds));
        }
        Ok(())
    }

    /// `κ_slow = (1+κ_θ+κ_C) + √((1+κ_θ+κ_C)² + ϑ)`.
    pub fn kappa_slow(&self) -> f64 {
        let a = 1.0 + self.kappa_theta + self.kappa_c;
        a + (a * a + self.vartheta).sqrt()
    }

    /// `κ_upnewt = 3(1-η2) + 1 + κ_C + κ_θ`.
    pub fn kappa_upnewt(&self) -> f64 {
        3.0 * (1.0 - self.eta2) + 1.0 + self.kappa_c + self.kappa_theta
    }

    pub fn step_constants(&self) -> StepConstants {
        StepConstants { kappa_c: self.kappa_c, kappa_theta: self.kappa_theta, theta: self.theta }
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "sigma0" => self.sigma0 = v.parse()?,
            "sigma_min" => self.sigma_min = parse_f64(key, v)?,
            "kappa_c" => self.kappa_c = parse_f64(key, v)?,
            "kappa_theta" => self.kappa_theta = parse_f64(key, v)?,
            "theta" => self.theta = parse_f64(key, v)?,
            "vartheta" => self.vartheta = parse_f64(key, v)?,
            "gamma1" => self.gamma1 = parse_f64(key, v)?,
            "gamma2" => self.gamma2 = parse_f64(key, v)?,
            "gamma3" => self.gamma3 = parse_f64(key, v)?,
            "eta1" => self.eta1 = parse_f64(key, v)?,
            "eta2" => self.eta2 = parse_f64(key, v)?,
            "eps" => self.eps = parse_f64(key, v)?,
            "max_iterations" => {
                self.max_iterations = v
                    .parse()
                    .map_err(|_| Error::Config(format!("max_iterations: expected a non-negative integer, got `{v}`")))?
            }
            "time_limit_seconds" => self.time_limit_seconds = parse_f64(key, v)?,
            "backend" => self.backend = v.parse()?,
            "preconditioner" => self.preconditioner = parse_preconditioner(v)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Textual value of one field, the inverse of [`SolverConfig::set`].
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "sigma0" => self.sigma0.to_string(),
            "sigma_min" => self.sigma_min.to_string(),
            "kappa_c" => self.kappa_c.to_string(),
            "kappa_theta" => self.kappa_theta.to_string(),
            "theta" => self.theta.to_string(),
            "vartheta" => self.vartheta.to_string(),
            "gamma1" => self.gamma1.to_string(),
            "gamma2" => self.gamma2.to_string(),
            "gamma3" => self.gamma3.to_string(),
            "eta1" => self.eta1.to_string(),
            "eta2" => self.eta2.to_string(),
            "eps" => self.eps.to_string(),
            "max_iterations" => self.max_iterations.to_string(),
            "time_limit_seconds" => self.time_limit_seconds.to_string(),
            "backend" => self.backend.to_string(),
            "preconditioner" => format_preconditioner(&self.preconditioner),
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        })
    }

    /// Applies a `key=value` document on top of `self`. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_key_values(&mut self, text: &str) -> Result<()> {
        for_each_pair(text, |k, v| self.set(k, v))
    }

    /// Applies a flat JSON object on top of `self`.
    pub fn apply_json(&mut self, text: &str) -> Result<()> {
        for_each_json(text, |k, v| self.set(k, v))
    }

    pub fn from_key_values(text: &str, backend: Backend) -> Result<Self> {
        let mut cfg = Self::default_config(backend);
        cfg.apply_key_values(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str, backend: Backend) -> Result<Self> {
        let mut cfg = Self::default_config(backend);
        cfg.apply_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> String {
        SOLVER_KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("known key"))).collect()
    }

    pub fn to_json(&self) -> String {
        let mut map = Map::new();
        for k in SOLVER_KEYS {
            map.insert(k.to_string(), json_value(&self.get(k).expect("known key")));
        }
        serde_json::to_string_pretty(&Value::Object(map)).expect("serializable")
    }
}

/// Configuration of the second-order driver: `base.eps` plays the role of
/// `ε1` (first-order tolerance) and `eps2` bounds the negative curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct SOConfig {
    pub base: SolverConfig,
    pub eps2: f64,
}

impl Default for SOConfig {
    fn default() -> Self {
        Self { base: SolverConfig::default_config(Backend::Exact), eps2: 1e-3 }
    }
}

impl SOConfig {
    pub fn new(base: SolverConfig, eps2: f64) -> Self {
        Self { base, eps2 }
    }

    pub fn eps1(&self) -> f64 {
        self.base.eps
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.eps2 > 0.0 && self.eps2 <= 1.0) {
            return Err(Error::Config(format!("eps2 must lie in (0, 1], got {}", self.eps2)));
        }
        if self.base.backend != Backend::Exact {
            return Err(Error::Config("the second-order driver requires the exact backend".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "eps1" => self.base.set("eps", value),
            "eps2" => {
                self.eps2 = parse_f64(key, value.trim())?;
                Ok(())
            }
            _ => self.base.set(key, value),
        }
    }

    pub fn get(&self, key: &str) -> Result<String> {
        match key {
            "eps1" => self.base.get("eps"),
            "eps2" => Ok(self.eps2.to_string()),
            _ => self.base.get(key),
        }
    }

    pub fn apply_key_values(&mut self, text: &str) -> Result<()> {
        for_each_pair(text, |k, v| self.set(k, v))
    }

    pub fn apply_json(&mut self, text: &str) -> Result<()> {
        for_each_json(text, |k, v| self.set(k, v))
    }

    fn keys() -> impl Iterator<Item = &'static str> {
        SOLVER_KEYS.iter().copied().map(|k| if k == "eps" { "eps1" } else { k }).chain(["eps2"])
    }

    pub fn to_key_values(&self) -> String {
        Self::keys().map(|k| format!("{k}={}\n", self.get(k).expect("known key"))).collect()
    }

    pub fn to_json(&self) -> String {
        let mut map = Map::new();
        for k in Self::keys() {
            map.insert(k.to_string(), json_value(&self.get(k).expect("known key")));
        }
        serde_json::to_string_pretty(&Value::Object(map)).expect("serializable")
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| !x.is_nan())
        .ok_or_else(|| Error::Config(format!("{key}: expected a number, got `{v}`")))
}

fn parse_preconditioner(v: &str) -> Result<Preconditioner> {
    if v == "identity" {
        return Ok(Preconditioner::Identity);
    }
    let Some(list) = v.strip_prefix("diagonal:") else {
        return Err(Error::Config(format!("preconditioner: expected `identity` or `diagonal:m1,m2,...`, got `{v}`")));
    };
    let entries = list.split(',').map(|m| parse_f64("preconditioner", m.trim())).collect::<Result<Vec<_>>>()?;
    Preconditioner::diagonal(entries)
}

fn format_preconditioner(p: &Preconditioner) -> String {
    match p {
        Preconditioner::Identity => "identity".into(),
        Preconditioner::Diagonal(m) => {
            let parts: Vec<String> = m.iter().map(|v| v.to_string()).collect();
            format!("diagonal:{}", parts.join(","))
        }
    }
}

fn json_value(text: &str) -> Value {
    match text.parse::<f64>() {
        Ok(x) if x.is_finite() => {
            if let Ok(i) = text.parse::<u64>() {
                Value::from(i)
            } else {
                Value::from(x)
            }
        }
        _ => Value::String(text.to_string()),
    }
}

fn for_each_pair(text: &str, mut f: impl FnMut(&str, &str) -> Result<()>) -> Result<()> {
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
        f(k.trim(), v.trim())?;
    }
    Ok(())
}

fn for_each_json(text: &str, mut f: impl FnMut(&str, &str) -> Result<()>) -> Result<()> {
    let value: Value = serde_json::from_str(text)?;
    let Value::Object(map) = value else {
        return Err(Error::Config("configuration JSON must be a flat object".into()));
    };
    for (k, v) in &map {
        let text = match v {
            Value::Number(n) => n.to_string(),
            Value::String(s) => s.clone(),
            other => return Err(Error::Config(format!("{k}: unsupported JSON value {other}"))),
        };
        f(k, &text)?;
    }
    Ok(())
}
