//! Scenario files.
//!
//! Flat `key = value` lines with dotted sections, `#` comments:
//!
//! ```text
//! policy = BS
//! seed = 1..=10
//! traffic.total_load = 0.8
//! task.involvement = 100
//! ```
//!
//! A JSON object with the same keys (flat dotted or nested by section) is
//! accepted too. Missing keys take the defaults of [`Scenario::default`].

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::engine::{client_population, select_cohort, FlTaskConfig};
use crate::pon::PonConfig;
use crate::traffic::{BackgroundConfig, COARSE_UNIT_BITS};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("{}key '{key}': {msg}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        key: String,
        msg: String,
    },
    #[error("inconsistent scenario: {0}")]
    Consistency(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

/// How the background load is given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadSpec {
    /// Total offered uplink load; background is what remains after training.
    Total(f64),
    /// Background load directly.
    Background(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub pon: PonConfig,
    /// `load` is a placeholder; the solved value comes from [`Scenario::resolve`].
    pub traffic: BackgroundConfig,
    pub load: LoadSpec,
    pub coarse: bool,
    pub task: FlTaskConfig,
    pub seeds: Vec<u64>,
    pub out_dir: String,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            pon: PonConfig::default(),
            traffic: BackgroundConfig::default(),
            load: LoadSpec::Total(0.8),
            coarse: false,
            task: FlTaskConfig::default(),
            seeds: vec![1],
            out_dir: "out".into(),
        }
    }
}

/// Uplink load of the training updates alone: `ΣM / (T_round C)`.
pub fn training_load(pon: &PonConfig, task: &FlTaskConfig) -> f64 {
    let all = client_population(task, pon);
    let n = select_cohort(&all, task.involvement_percent).map_or(0, |c| c.len());
    n as f64 * task.model_bits / (task.round_period * pon.uplink_capacity)
}

/// Background load for a given total load. A total of zero means no
/// background at all.
pub fn solve_background_load(
    total: f64,
    pon: &PonConfig,
    task: &FlTaskConfig,
) -> Result<f64, ScenarioError> {
    if total == 0.0 {
        return Ok(0.0);
    }
    let train = training_load(pon, task);
    let bg = total - train;
    if bg < 0.0 {
        return Err(ScenarioError::Consistency(format!(
            "total load {total} is below the training load {train:.6} at {}% involvement",
            task.involvement_percent
        )));
    }
    if bg >= 1.0 {
        return Err(ScenarioError::Consistency(format!(
            "background load {bg:.6} leaves no capacity (total {total})"
        )));
    }
    Ok(bg)
}

impl Scenario {
    /// Task and background config for one cell.
    pub fn resolve(
        &self,
        load: LoadSpec,
        involvement: f64,
        seed: u64,
    ) -> Result<(BackgroundConfig, FlTaskConfig), ScenarioError> {
        let mut task = self.task.clone();
        task.involvement_percent = involvement;
        let bg_load = match load {
            LoadSpec::Total(t) => solve_background_load(t, &self.pon, &task)?,
            LoadSpec::Background(b) => b,
        };
        let mut bg = self.traffic.clone();
        bg.load = bg_load;
        bg.seed = seed;
        bg.coarse_unit_bits = self.coarse.then_some(COARSE_UNIT_BITS);
        bg.validate()
            .map_err(|e| ScenarioError::Consistency(e.to_string()))?;
        Ok((bg, task))
    }

    /// Checks every cross-field constraint at the configured load.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.pon
            .validate()
            .map_err(|e| ScenarioError::Consistency(e.to_string()))?;
        self.task
            .validate()
            .map_err(|e| ScenarioError::Consistency(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(ScenarioError::Consistency("seed list is empty".into()));
        }
        if let Some(w) = &self.traffic.onu_weights {
            if w.len() != self.pon.num_onus as usize {
                return Err(ScenarioError::Consistency(format!(
                    "traffic.onu_weights has {} entries for {} ONUs",
                    w.len(),
                    self.pon.num_onus
                )));
            }
        }
        self.resolve(self.load, self.task.involvement_percent, self.seeds[0])?;
        Ok(())
    }

    /// Fully resolved config in the file format; parses back to `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let p = &self.pon;
        let t = &self.task;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("policy", t.policy.to_string());
        kv("seed", join(&self.seeds));
        kv("out", self.out_dir.clone());
        kv("pon.num_onus", p.num_onus.to_string());
        kv("pon.uplink_capacity", p.uplink_capacity.to_string());
        kv("pon.downlink_capacity", p.downlink_capacity.to_string());
        kv("pon.downlink_share", p.downlink_share.to_string());
        let d = &p.distance_km;
        if !d.is_empty() && d.iter().all(|x| *x == d[0]) {
            kv("pon.distance_km", d[0].to_string());
        } else {
            kv("pon.distance_km", join(d));
        }
        kv("pon.prop_delay_per_km", p.prop_delay_per_km.to_string());
        kv("pon.polling_cycle", p.polling_cycle.to_string());
        kv("pon.guard_time", p.guard_time.to_string());
        match self.load {
            LoadSpec::Total(x) => kv("traffic.total_load", x.to_string()),
            LoadSpec::Background(x) => kv("traffic.background_load", x.to_string()),
        }
        kv("traffic.unit_bits", self.traffic.unit_bits.to_string());
        kv("traffic.coarse", self.coarse.to_string());
        if let Some(w) = &self.traffic.onu_weights {
            kv("traffic.onu_weights", join(w));
        }
        kv("task.rounds", t.rounds.to_string());
        kv("task.round_period", t.round_period.to_string());
        kv("task.model_bits", t.model_bits.to_string());
        kv("task.aggregation_time", t.aggregation_time.to_string());
        kv("task.involvement", t.involvement_percent.to_string());
        kv("task.compute_min", t.compute_min.to_string());
        kv("task.compute_max", t.compute_max.to_string());
        kv("task.clients_per_onu", t.clients_per_onu.to_string());
        kv("task.activation_offset", t.activation_offset.to_string());
        kv("task.strict", t.strict.to_string());
        kv("task.compute_jitter", t.compute_jitter.to_string());
        s
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Seed list: comma-separated values or inclusive ranges `a..=b`.
pub fn parse_seed_list(v: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..=") {
            let a: u64 = a.trim().parse().map_err(|_| format!("bad seed '{a}'"))?;
            let b: u64 = b.trim().parse().map_err(|_| format!("bad seed '{b}'"))?;
            if b < a {
                return Err(format!("empty seed range {part}"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed '{part}'"))?);
        }
    }
    if out.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse '{v}'"))
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',').map(|x| num(x.trim())).collect()
}

struct Builder {
    sc: Scenario,
    distances: Option<Vec<f64>>,
    load_key: Option<String>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            sc: Scenario::default(),
            distances: None,
            load_key: None,
        }
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let sc = &mut self.sc;
        match key {
            "policy" => sc.task.policy = v.parse()?,
            "seed" | "seeds" => sc.seeds = parse_seed_list(v)?,
            "out" => sc.out_dir = v.to_string(),
            "pon.num_onus" => sc.pon.num_onus = num(v)?,
            "pon.uplink_capacity" => sc.pon.uplink_capacity = num(v)?,
            "pon.downlink_capacity" => sc.pon.downlink_capacity = num(v)?,
            "pon.downlink_share" => sc.pon.downlink_share = num(v)?,
            "pon.distance_km" => self.distances = Some(list(v)?),
            "pon.prop_delay_per_km" => sc.pon.prop_delay_per_km = num(v)?,
            "pon.polling_cycle" => sc.pon.polling_cycle = num(v)?,
            "pon.guard_time" => sc.pon.guard_time = num(v)?,
            "traffic.total_load" | "total_load" | "traffic.background_load" => {
                if let Some(prev) = &self.load_key {
                    return Err(format!("load already set by '{prev}'"));
                }
                let x: f64 = num(v)?;
                sc.load = if key.ends_with("background_load") {
                    LoadSpec::Background(x)
                } else {
                    LoadSpec::Total(x)
                };
                self.load_key = Some(key.to_string());
            }
            "traffic.unit_bits" => sc.traffic.unit_bits = num(v)?,
            "traffic.coarse" => sc.coarse = flag(v)?,
            "traffic.onu_weights" => sc.traffic.onu_weights = Some(list(v)?),
            "task.rounds" => sc.task.rounds = num(v)?,
            "task.round_period" => sc.task.round_period = num(v)?,
            "task.model_bits" => sc.task.model_bits = num(v)?,
            "task.aggregation_time" => sc.task.aggregation_time = num(v)?,
            "task.involvement" => sc.task.involvement_percent = num(v)?,
            "task.compute_min" => sc.task.compute_min = num(v)?,
            "task.compute_max" => sc.task.compute_max = num(v)?,
            "task.clients_per_onu" => sc.task.clients_per_onu = num(v)?,
            "task.activation_offset" => sc.task.activation_offset = num(v)?,
            "task.strict" => sc.task.strict = flag(v)?,
            "task.compute_jitter" => sc.task.compute_jitter = num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Scenario, ScenarioError> {
        let n = self.sc.pon.num_onus as usize;
        let d = match self.distances.take() {
            Some(d) if d.len() == 1 => vec![d[0]; n],
            Some(d) => d,
            None => vec![self.sc.pon.distance_km.first().copied().unwrap_or(20.0); n],
        };
        if d.len() != n {
            return Err(ScenarioError::Consistency(format!(
                "pon.distance_km has {} entries for {n} ONUs",
                d.len()
            )));
        }
        self.sc.pon.distance_km = d;
        self.sc.validate()?;
        Ok(self.sc)
    }
}

/// Parses a scenario from text, key-value or JSON.
pub fn parse_config(text: &str) -> Result<Scenario, ScenarioError> {
    if text.trim_start().starts_with('{') {
        return parse_json(text);
    }
    let mut b = Builder::new();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |key: &str, msg: String| ScenarioError::Parse {
            line: Some(i + 1),
            key: key.to_string(),
            msg,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(line, "expected key = value".into()))?;
        let (k, v) = (k.trim(), v.trim());
        if !seen.insert(k.to_string()) {
            return Err(err(k, "duplicate key".into()));
        }
        b.set(k, v).map_err(|m| err(k, m))?;
    }
    b.finish()
}

fn flatten(
    prefix: &str,
    v: &serde_json::Value,
    out: &mut Vec<(String, String)>,
) -> Result<(), ScenarioError> {
    use serde_json::Value;
    let bad = |msg: &str| ScenarioError::Parse {
        line: None,
        key: prefix.to_string(),
        msg: msg.into(),
    };
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, x, out)?;
            }
        }
        Value::Array(xs) => {
            let parts: Result<Vec<String>, _> = xs
                .iter()
                .map(|x| match x {
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(bad("arrays must hold numbers")),
                })
                .collect();
            out.push((prefix.to_string(), parts?.join(",")));
        }
        Value::Number(n) => out.push((prefix.to_string(), n.to_string())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => return Err(bad("null is not a value")),
    }
    Ok(())
}

fn parse_json(text: &str) -> Result<Scenario, ScenarioError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        line: Some(e.line()),
        key: String::new(),
        msg: e.to_string(),
    })?;
    let mut pairs = Vec::new();
    flatten("", &v, &mut pairs)?;
    let mut b = Builder::new();
    for (k, val) in pairs {
        b.set(&k, &val).map_err(|msg| ScenarioError::Parse {
            line: None,
            key: k.clone(),
            msg,
        })?;
    }
    b.finish()
}

pub fn load_config(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_config(&text)
}
