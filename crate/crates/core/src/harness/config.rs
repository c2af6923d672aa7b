//! Flat `key = value` configuration with dotted sections.
//!
//! ```text
//! # comments start with '#'
//! n_kcs = 10
//! scenarios = random, informed
//! pkt.learning_rate = 0.05
//! simulator.forget_tau = 10
//! ```
//!
//! Every key has a default; a file only lists overrides. The canonical
//! rendering (every key, sorted) is what the run manifest hashes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pkt::PktHyper;
use crate::simulator::{Scenario, SimulatorConfig};
use crate::tutoring::{ZpdesConfig, DEFAULT_MBT_TEMPERATURE};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{0}` has no value")]
    MissingValue(String),
    #[error("invalid value for config key `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error("config key `{0}` given twice")]
    Duplicate(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pkt,
    Ki,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pkt => "pkt",
            Method::Ki => "ki",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pkt" => Ok(Method::Pkt),
            "ki" => Ok(Method::Ki),
            other => Err(format!("unknown method `{other}` (expected pkt or ki)")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TutorKind {
    Random,
    ZpdesGt,
    ZpdesPkt,
    ZpdesKi,
    MbtPkt,
}

impl TutorKind {
    pub const ALL: [TutorKind; 5] = [
        TutorKind::Random,
        TutorKind::ZpdesGt,
        TutorKind::ZpdesPkt,
        TutorKind::ZpdesKi,
        TutorKind::MbtPkt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TutorKind::Random => "random",
            TutorKind::ZpdesGt => "zpdes-gt",
            TutorKind::ZpdesPkt => "zpdes-pkt",
            TutorKind::ZpdesKi => "zpdes-ki",
            TutorKind::MbtPkt => "mbt-pkt",
        }
    }

    /// Discovery method whose output the tutor consumes, if any.
    pub fn method(self) -> Option<Method> {
        match self {
            TutorKind::ZpdesPkt | TutorKind::MbtPkt => Some(Method::Pkt),
            TutorKind::ZpdesKi => Some(Method::Ki),
            TutorKind::Random | TutorKind::ZpdesGt => None,
        }
    }
}

impl FromStr for TutorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TutorKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown tutor `{s}` (expected one of random, zpdes-gt, zpdes-pkt, zpdes-ki, mbt-pkt)"))
    }
}

impl fmt::Display for TutorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbtConfig {
    pub temperature: f64,
}

impl Default for MbtConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_MBT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_simulators: usize,
    pub n_kcs: usize,
    pub n_exercises: usize,
    pub n_learners: usize,
    pub horizon: usize,
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<Method>,
    pub tutors: Vec<TutorKind>,
    pub eval_learners: usize,
    /// Replicate seeds; each one generates its own set of simulators.
    pub seeds: Vec<u64>,
    pub simulator: SimulatorConfig,
    pub pkt: PktHyper,
    pub zpdes: ZpdesConfig,
    pub mbt: MbtConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_simulators: 10,
            n_kcs: 10,
            n_exercises: 30,
            n_learners: 400,
            horizon: 300,
            scenarios: vec![Scenario::Random, Scenario::Informed],
            methods: vec![Method::Pkt, Method::Ki],
            tutors: TutorKind::ALL.to_vec(),
            eval_learners: 300,
            seeds: vec![0],
            simulator: SimulatorConfig::default(),
            pkt: PktHyper::default(),
            zpdes: ZpdesConfig::default(),
            mbt: MbtConfig::default(),
        }
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_owned(), leaf.clone());
        }
    }
}

fn render(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

/// Parses `raw` with the JSON type of `template`.
fn typed(raw: &str, template: &Value) -> Result<Value, String> {
    match template {
        Value::Bool(_) => raw.parse::<bool>().map(Value::Bool).map_err(|e| e.to_string()),
        Value::Number(n) if n.is_u64() => raw
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| format!("expected a non-negative integer, got `{raw}`")),
        Value::Number(_) => raw
            .parse::<f64>()
            .map_err(|_| format!("expected a number, got `{raw}`"))
            .and_then(|x| {
                serde_json::Number::from_f64(x)
                    .map(Value::Number)
                    .ok_or_else(|| format!("expected a finite number, got `{raw}`"))
            }),
        Value::Array(items) => {
            let element = items.first().cloned().unwrap_or(Value::String(String::new()));
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| typed(s, &element))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        _ => Ok(Value::String(raw.to_owned())),
    }
}

fn insert_path(root: &mut Value, key: &str, value: Value) {
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let map = node.as_object_mut().expect("config sections are objects");
        if parts.peek().is_none() {
            map.insert(part.to_owned(), value);
            return;
        }
        node = map.entry(part.to_owned()).or_insert_with(|| Value::Object(Map::new()));
    }
}

impl ExperimentConfig {
    /// All keys with their current values, sorted by key.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let value = serde_json::to_value(self).expect("config serialises");
        let mut flat = BTreeMap::new();
        flatten("", &value, &mut flat);
        flat.into_iter().map(|(k, v)| (k, render(&v))).collect()
    }

    pub fn keys() -> Vec<String> {
        Self::default().entries().into_keys().collect()
    }

    pub fn canonical_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical rendering, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parses overrides on top of the defaults, then validates.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    text: body.to_owned(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_owned()) {
                return Err(ConfigError::Duplicate(key.to_owned()));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one dotted key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut root = serde_json::to_value(&*self).expect("config serialises");
        let mut flat = BTreeMap::new();
        flatten("", &root, &mut flat);
        let template = flat.get(key).ok_or_else(|| ConfigError::UnknownKey(key.to_owned()))?;
        if value.is_empty() {
            return Err(ConfigError::MissingValue(key.to_owned()));
        }
        let invalid = |message: String| ConfigError::InvalidValue {
            key: key.to_owned(),
            message,
        };
        let parsed = typed(value, template).map_err(invalid)?;
        insert_path(&mut root, key, parsed);
        *self = serde_json::from_value(root).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("n_simulators", self.n_simulators),
            ("n_kcs", self.n_kcs),
            ("n_exercises", self.n_exercises),
            ("n_learners", self.n_learners),
            ("horizon", self.horizon),
            ("eval_learners", self.eval_learners),
            ("seeds", self.seeds.len()),
            ("scenarios", self.scenarios.len()),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        self.simulator.validate().map_err(ConfigError::Invalid)?;
        self.pkt.validate().map_err(ConfigError::Invalid)?;
        self.zpdes.validate().map_err(ConfigError::Invalid)?;
        if !(self.mbt.temperature > 0.0) {
            return Err(ConfigError::Invalid("mbt.temperature must be positive".into()));
        }
        Ok(())
    }
}
