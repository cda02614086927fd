//! Run configuration: a JSON object with a fixed schema. Every problem found
//! while reading it is collected and reported at once.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde_json::{json, Map, Value};

use chemostat_core::classic::Monod;
use chemostat_core::ensemble::{Bandwidth, DEFAULT_QUANTILE_BUDGET};
use chemostat_core::fit::FitWeights;
use chemostat_core::ibm::DEFAULT_H_MAX;
use chemostat_core::{ChemostatParams, InitialMassDensity};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem{}):", self.0.len(), if self.0.len() == 1 { "" } else { "s" })?;
        for p in &self.0 {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Initial {
    Count(usize),
    /// Biomass concentration, mg/l.
    Biomass(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityChoice {
    Transient,
    Smooth,
    Custom(Vec<(f64, f64)>),
}

impl DensityChoice {
    pub fn build(&self) -> chemostat_core::Result<InitialMassDensity> {
        match self {
            Self::Transient => Ok(InitialMassDensity::Transient),
            Self::Smooth => Ok(InitialMassDensity::Smooth),
            Self::Custom(points) => InitialMassDensity::tabulated(points.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: Option<String>,
    /// Includes D and V.
    pub params: ChemostatParams,
    pub initial: Initial,
    pub density: DensityChoice,
    pub t_max: f64,
    pub sample_dt: f64,
    pub cells: usize,
    pub dt_ide: f64,
    pub h_max_ibm: f64,
    pub force_cfl: bool,
    pub seed: u64,
    pub n_runs: u64,
    pub out: String,
    pub snapshot_times: Vec<f64>,
    pub histogram_bins: usize,
    pub ode: Option<Monod>,
    pub fit_weights: FitWeights,
    pub fit_horizon: Option<f64>,
    pub compare_fit: bool,
    pub event_log: bool,
    pub write_runs: bool,
    pub kde_bandwidth: Bandwidth,
    pub quantile_budget: usize,
    pub workers: Option<usize>,
}

pub const MODELS: [&str; 6] = ["ibm", "ide", "ode", "fit", "ensemble", "compare"];

struct Reader<'a> {
    obj: &'a Map<String, Value>,
    prefix: &'a str,
    used: BTreeSet<String>,
    problems: &'a mut Vec<String>,
}

impl<'a> Reader<'a> {
    fn new(obj: &'a Map<String, Value>, prefix: &'a str, problems: &'a mut Vec<String>) -> Self {
        Self {
            obj,
            prefix,
            used: BTreeSet::new(),
            problems,
        }
    }

    fn name(&self, key: &str) -> String {
        format!("{}{key}", self.prefix)
    }

    fn take(&mut self, key: &str) -> Option<&'a Value> {
        self.used.insert(key.to_string());
        self.obj.get(key).filter(|v| !v.is_null())
    }

    fn problem(&mut self, msg: String) {
        self.problems.push(msg);
    }

    fn num(&mut self, key: &str, unit: &str) -> Option<f64> {
        let v = self.take(key)?;
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                let n = self.name(key);
                self.problem(format!("{n} ({unit}): expected a number, got {v}"));
                None
            }
        }
    }

    /// A number checked against `ok`; falls back to `default` on any problem.
    fn f64_or(&mut self, key: &str, unit: &str, default: f64, rule: &str, ok: impl Fn(f64) -> bool) -> f64 {
        match self.num(key, unit) {
            Some(x) if ok(x) => x,
            Some(x) => {
                let n = self.name(key);
                self.problem(format!("{n} = {x} {unit}: must be {rule}"));
                default
            }
            None => default,
        }
    }

    fn count(&mut self, key: &str, what: &str) -> Option<u64> {
        let v = self.take(key)?;
        match v.as_u64() {
            Some(x) => Some(x),
            None => {
                let n = self.name(key);
                self.problem(format!("{n} ({what}): expected a non-negative integer, got {v}"));
                None
            }
        }
    }

    fn count_or(&mut self, key: &str, what: &str, default: u64, min: u64) -> u64 {
        match self.count(key, what) {
            Some(x) if x >= min => x,
            Some(x) => {
                let n = self.name(key);
                self.problem(format!("{n} = {x} {what}: must be >= {min}"));
                default
            }
            None => default,
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> bool {
        match self.take(key) {
            None => default,
            Some(Value::Bool(b)) => *b,
            Some(v) => {
                let n = self.name(key);
                self.problem(format!("{n}: expected true or false, got {v}"));
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<&'a str> {
        let v = self.take(key)?;
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                let n = self.name(key);
                self.problem(format!("{n}: expected a string, got {v}"));
                None
            }
        }
    }

    fn object(&mut self, key: &str) -> Option<&'a Map<String, Value>> {
        let v = self.take(key)?;
        match v.as_object() {
            Some(o) => Some(o),
            None => {
                let n = self.name(key);
                self.problem(format!("{n}: expected an object, got {v}"));
                None
            }
        }
    }

    fn finish(self) {
        for k in self.obj.keys() {
            if !self.used.contains(k) {
                self.problems.push(format!("unknown key \"{}{k}\"", self.prefix));
            }
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0
}

fn read_params(obj: Option<&Map<String, Value>>, problems: &mut Vec<String>) -> ChemostatParams {
    let mut p = ChemostatParams::new(1.0, 1.0);
    let empty = Map::new();
    let mut r = Reader::new(obj.unwrap_or(&empty), "params.", problems);
    let fields: [(&str, &str, &mut f64); 10] = [
        ("s_in", "mg/l", &mut p.s_in),
        ("k", "", &mut p.k),
        ("m_max", "mg", &mut p.m_max),
        ("m_div", "mg", &mut p.m_div),
        ("lambda_bar", "1/h", &mut p.lambda_bar),
        ("p_lambda", "1/mg", &mut p.p_lambda),
        ("p_beta", "", &mut p.p_beta),
        ("r_max", "1/h", &mut p.r_max),
        ("k_r", "mg/l", &mut p.k_r),
        ("s0", "mg/l", &mut p.s0),
    ];
    for (key, unit, slot) in fields {
        if let Some(x) = r.num(key, unit) {
            *slot = x;
        }
    }
    r.finish();
    p
}

/// Validates a parsed JSON document.
pub fn from_value(doc: &Value) -> Result<RunConfig, ConfigError> {
    let Some(obj) = doc.as_object() else {
        return Err(ConfigError(vec![format!("configuration must be a JSON object, got {doc}")]));
    };
    let missing = |k: &str| obj.get(k).is_none_or(Value::is_null);
    let mut problems = Vec::new();
    let mut nested = Vec::new();
    let mut r = Reader::new(obj, "", &mut problems);

    let model = r.string("model").map(str::to_string);
    if let Some(m) = &model {
        if !MODELS.contains(&m.as_str()) {
            r.problem(format!("model = \"{m}\": must be one of {}", MODELS.join(", ")));
        }
    }

    let params_obj = r.object("params");
    let mut params = read_params(params_obj, &mut nested);
    let d = r.num("D", "1/h");
    let v = r.num("V", "l");
    if missing("D") {
        r.problem("D (dilution rate, 1/h): required".into());
    }
    if missing("V") {
        r.problem("V (volume, l): required".into());
    }
    params.dilution = d.unwrap_or(1.0);
    params.volume = v.unwrap_or(1.0);
    for p in params.problems() {
        r.problem(p);
    }

    let n0 = r.count("n0", "individuals");
    let biomass = r.num("initial_biomass", "mg/l");
    let initial = match (n0, biomass) {
        (Some(_), Some(_)) => {
            r.problem("n0 and initial_biomass are mutually exclusive".into());
            Initial::Count(1)
        }
        (Some(0), None) => {
            r.problem("n0 = 0 individuals: must be >= 1".into());
            Initial::Count(1)
        }
        (Some(n), None) => Initial::Count(n as usize),
        (None, Some(b)) if b > 0.0 => Initial::Biomass(b),
        (None, Some(b)) => {
            r.problem(format!("initial_biomass = {b} mg/l: must be > 0"));
            Initial::Biomass(1.0)
        }
        (None, None) => {
            if missing("n0") && missing("initial_biomass") {
                r.problem("n0 (individuals) or initial_biomass (mg/l): required".into());
            }
            Initial::Count(1)
        }
    };

    let table = r.take("custom_density");
    let density = match r.string("density").unwrap_or("d") {
        "d" | "transient" => DensityChoice::Transient,
        "d'" | "smooth" => DensityChoice::Smooth,
        "custom" => match table.map(parse_table) {
            Some(Ok(points)) => DensityChoice::Custom(points),
            Some(Err(e)) => {
                r.problem(format!("custom_density: {e}"));
                DensityChoice::Transient
            }
            None => {
                r.problem("custom_density: required when density = \"custom\"".into());
                DensityChoice::Transient
            }
        },
        other => {
            r.problem(format!("density = \"{other}\": must be d, d', or custom"));
            DensityChoice::Transient
        }
    };
    if table.is_some() && !matches!(density, DensityChoice::Custom(_)) {
        r.problem("custom_density is only allowed with density = \"custom\"".into());
    }
    if let DensityChoice::Custom(points) = &density {
        if let Err(e) = InitialMassDensity::tabulated(points.clone()) {
            r.problem(format!("custom_density: {e}"));
        } else if points.iter().any(|&(x, _)| x < 0.0 || x > params.m_max) {
            r.problem("custom_density: knots must lie in [0, m_max]".into());
        }
    }

    let t_max = r.f64_or("t_max", "h", 80.0, "> 0", positive);
    let sample_dt = r.f64_or("sample_dt", "h", 0.1, "> 0", positive);
    let cells = r.count_or("I", "cells", 5000, 1) as usize;
    let dt_ide = r.f64_or("dt_ide", "h", 5e-4, "> 0", positive);
    let h_max_ibm = r.f64_or("h_max_ibm", "h", DEFAULT_H_MAX, "> 0", positive);
    let force_cfl = r.bool_or("force_cfl", false);
    let seed = r.count("seed", "").unwrap_or(1);
    let n_runs = r.count_or("n_runs", "runs", 1, 1);
    let out = r.string("out").unwrap_or("out").to_string();
    let snapshot_times = match r.take("snapshot_times") {
        None => Vec::new(),
        Some(v) => match v.as_array().map(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>()) {
            Some(Some(ts)) => {
                if ts.iter().any(|&t| !(t >= 0.0 && t <= t_max)) {
                    r.problem(format!("snapshot_times (h): every time must lie in [0, t_max = {t_max}]"));
                }
                ts
            }
            _ => {
                r.problem(format!("snapshot_times (h): expected an array of numbers, got {v}"));
                Vec::new()
            }
        },
    };
    let histogram_bins = r.count_or("histogram_bins", "bins", 50, 1) as usize;

    let ode = r.object("ode").and_then(|o| {
        let mut sub = Reader::new(o, "ode.", &mut nested);
        let mu = sub.num("mu_max", "1/h");
        let ks = sub.num("K_s", "mg/l");
        let mut bad = Vec::new();
        match (mu, ks) {
            (Some(mu), Some(ks)) if mu > 0.0 && ks > 0.0 => {
                sub.finish();
                return Some(Monod { mu_max: mu, k_s: ks });
            }
            (Some(_), Some(_)) => bad.push("ode: mu_max (1/h) and K_s (mg/l) must be > 0".to_string()),
            _ => bad.push("ode: needs both mu_max (1/h) and K_s (mg/l)".to_string()),
        }
        sub.finish();
        nested.extend(bad);
        None
    });

    let (fit_weights, fit_horizon) = match r.object("fit") {
        None => (FitWeights::RangeNormalized, None),
        Some(o) => {
            let mut sub = Reader::new(o, "fit.", &mut nested);
            let weights = match sub.take("weight") {
                None => FitWeights::RangeNormalized,
                Some(Value::String(s)) if s == "range" => FitWeights::RangeNormalized,
                Some(v) => match v.as_f64() {
                    Some(w) if w >= 0.0 => FitWeights::Explicit(w),
                    _ => {
                        sub.problem(format!("fit.weight: expected \"range\" or a number >= 0, got {v}"));
                        FitWeights::RangeNormalized
                    }
                },
            };
            let horizon = sub.num("horizon", "h");
            if horizon.is_some_and(|h| h <= 0.0) {
                sub.problem("fit.horizon (h): must be > 0".into());
            }
            sub.finish();
            (weights, horizon.filter(|&h| h > 0.0))
        }
    };
    let compare_fit = r.bool_or("compare_fit", true);
    let event_log = r.bool_or("event_log", true);
    let write_runs = r.bool_or("write_runs", true);
    let kde_bandwidth = match r.take("kde_bandwidth") {
        None => Bandwidth::Silverman,
        Some(Value::String(s)) if s == "silverman" => Bandwidth::Silverman,
        Some(v) => match v.as_f64() {
            Some(h) if h > 0.0 => Bandwidth::Fixed(h),
            _ => {
                r.problem(format!("kde_bandwidth (h): expected \"silverman\" or a number > 0, got {v}"));
                Bandwidth::Silverman
            }
        },
    };
    let quantile_budget = r.count_or("quantile_budget", "values", DEFAULT_QUANTILE_BUDGET as u64, 1) as usize;
    let workers = r.count("workers", "threads").map(|w| w as usize);
    if workers == Some(0) {
        r.problem("workers = 0 threads: must be >= 1".into());
    }
    r.finish();
    problems.extend(nested);

    if !problems.is_empty() {
        return Err(ConfigError(problems));
    }
    Ok(RunConfig {
        model,
        params,
        initial,
        density,
        t_max,
        sample_dt,
        cells,
        dt_ide,
        h_max_ibm,
        force_cfl,
        seed,
        n_runs,
        out,
        snapshot_times,
        histogram_bins,
        ode,
        fit_weights,
        fit_horizon,
        compare_fit,
        event_log,
        write_runs,
        kde_bandwidth,
        quantile_budget,
        workers,
    })
}

fn parse_table(v: &Value) -> Result<Vec<(f64, f64)>, String> {
    let rows = v.as_array().ok_or_else(|| format!("expected an array of [x, value] pairs, got {v}"))?;
    rows.iter()
        .map(|row| match row.as_array().map(|a| a.as_slice()) {
            Some([x, y]) => match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) => Ok((x, y)),
                _ => Err(format!("non-numeric knot {row}")),
            },
            _ => Err(format!("expected [x, value], got {row}")),
        })
        .collect()
}

/// Sets `path` (dot-separated) to `value`, parsed as JSON when possible and
/// taken as a string otherwise.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("--set {assignment}: expected key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("--set {assignment}: empty key"));
    }
    let mut node = doc;
    for k in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("--set {assignment}: \"{k}\" is not inside an object"))?;
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| format!("--set {assignment}: parent of \"{}\" is not an object", keys[keys.len() - 1]))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Reads a configuration file and applies the overrides in order.
pub fn load_config(path: &Path, sets: &[String]) -> Result<RunConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(format!("{}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| LoadError::Config(ConfigError(vec![format!("{}: not valid JSON: {e}", path.display())])))?;
    let mut problems = Vec::new();
    for s in sets {
        if let Err(e) = apply_set(&mut doc, s) {
            problems.push(e);
        }
    }
    if !problems.is_empty() {
        return Err(LoadError::Config(ConfigError(problems)));
    }
    from_value(&doc).map_err(LoadError::Config)
}

#[derive(Debug)]
pub enum LoadError {
    Io(String),
    Config(ConfigError),
}

impl RunConfig {
    /// Effective configuration as a document that [`from_value`] accepts and
    /// maps back to `self`.
    pub fn to_value(&self) -> Value {
        let p = &self.params;
        let mut m = Map::new();
        if let Some(model) = &self.model {
            m.insert("model".into(), json!(model));
        }
        m.insert(
            "params".into(),
            json!({
                "s_in": p.s_in, "k": p.k, "m_max": p.m_max, "m_div": p.m_div,
                "lambda_bar": p.lambda_bar, "p_lambda": p.p_lambda, "p_beta": p.p_beta,
                "r_max": p.r_max, "k_r": p.k_r, "s0": p.s0,
            }),
        );
        m.insert("D".into(), json!(p.dilution));
        m.insert("V".into(), json!(p.volume));
        match self.initial {
            Initial::Count(n) => m.insert("n0".into(), json!(n)),
            Initial::Biomass(b) => m.insert("initial_biomass".into(), json!(b)),
        };
        match &self.density {
            DensityChoice::Transient => {
                m.insert("density".into(), json!("d"));
            }
            DensityChoice::Smooth => {
                m.insert("density".into(), json!("d'"));
            }
            DensityChoice::Custom(points) => {
                m.insert("density".into(), json!("custom"));
                m.insert(
                    "custom_density".into(),
                    Value::Array(points.iter().map(|&(x, y)| json!([x, y])).collect()),
                );
            }
        }
        m.insert("t_max".into(), json!(self.t_max));
        m.insert("sample_dt".into(), json!(self.sample_dt));
        m.insert("I".into(), json!(self.cells));
        m.insert("dt_ide".into(), json!(self.dt_ide));
        m.insert("h_max_ibm".into(), json!(self.h_max_ibm));
        m.insert("force_cfl".into(), json!(self.force_cfl));
        m.insert("seed".into(), json!(self.seed));
        m.insert("n_runs".into(), json!(self.n_runs));
        m.insert("out".into(), json!(self.out));
        m.insert("snapshot_times".into(), json!(self.snapshot_times));
        m.insert("histogram_bins".into(), json!(self.histogram_bins));
        if let Some(k) = self.ode {
            m.insert("ode".into(), json!({"mu_max": k.mu_max, "K_s": k.k_s}));
        }
        let mut fit = Map::new();
        fit.insert(
            "weight".into(),
            match self.fit_weights {
                FitWeights::RangeNormalized => json!("range"),
                FitWeights::Explicit(w) => json!(w),
            },
        );
        if let Some(h) = self.fit_horizon {
            fit.insert("horizon".into(), json!(h));
        }
        m.insert("fit".into(), Value::Object(fit));
        m.insert("compare_fit".into(), json!(self.compare_fit));
        m.insert("event_log".into(), json!(self.event_log));
        m.insert("write_runs".into(), json!(self.write_runs));
        m.insert(
            "kde_bandwidth".into(),
            match self.kde_bandwidth {
                Bandwidth::Silverman => json!("silverman"),
                Bandwidth::Fixed(h) => json!(h),
            },
        );
        m.insert("quantile_budget".into(), json!(self.quantile_budget));
        if let Some(w) = self.workers {
            m.insert("workers".into(), json!(w));
        }
        Value::Object(m)
    }

    /// Document hashed into output headers: everything that can change the
    /// numbers, so not the output directory or the worker count.
    pub fn hashed_value(&self) -> Value {
        let mut v = self.to_value();
        let m = v.as_object_mut().unwrap();
        m.remove("out");
        m.remove("workers");
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_creates_nested_keys_and_parses_json() {
        let mut doc = json!({});
        apply_set(&mut doc, "params.p_beta=3").unwrap();
        apply_set(&mut doc, "density=d'").unwrap();
        apply_set(&mut doc, "snapshot_times=[1,2]").unwrap();
        assert_eq!(doc, json!({"params": {"p_beta": 3}, "density": "d'", "snapshot_times": [1, 2]}));
        assert!(apply_set(&mut doc, "novalue").is_err());
        assert!(apply_set(&mut doc, "density.x=1").is_err());
        assert!(apply_set(&mut doc, "a..b=1").is_err());
    }

    #[test]
    fn table_parsing() {
        assert_eq!(parse_table(&json!([[0.0, 1.0], [1.0, 2.0]])).unwrap(), vec![(0.0, 1.0), (1.0, 2.0)]);
        assert!(parse_table(&json!([[0.0]])).is_err());
        assert!(parse_table(&json!("x")).is_err());
    }
}
