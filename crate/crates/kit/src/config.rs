//! Flat run configuration: TOML file values overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unissl_core::objectives::{LabelMode, Objective, ObjectiveConfig};
use unissl_core::optim::AdamConfig;
use unissl_core::transfer::ProbeConfig;

use crate::error::{KitError, Result};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "UNISSL_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Str,
    Int,
    Float,
    Bool,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Str => "string",
            Kind::Int => "integer",
            Kind::Float => "number",
            Kind::Bool => "boolean",
        }
    }
}

/// Every accepted key with its type. Required keys have no default.
const KEYS: &[(&str, Kind)] = &[
    ("objective", Kind::Str),
    ("spec", Kind::Str),
    ("steps", Kind::Int),
    ("seed", Kind::Int),
    ("data_seed", Kind::Int),
    ("deterministic", Kind::Bool),
    ("temperature", Kind::Float),
    ("shuffle_rate", Kind::Float),
    ("label_mode", Kind::Str),
    ("output_dir", Kind::Str),
    ("batch_size", Kind::Int),
    ("layers", Kind::Int),
    ("d_model", Kind::Int),
    ("heads", Kind::Int),
    ("lr", Kind::Float),
    ("weight_decay", Kind::Float),
    ("clip_grad_norm", Kind::Float),
    ("probe_epochs", Kind::Int),
    ("probe_batch_size", Kind::Int),
    ("probe_standardize", Kind::Bool),
    ("num_train", Kind::Int),
    ("num_val", Kind::Int),
    ("noise_scale", Kind::Float),
    ("checkpoint_every", Kind::Int),
    ("log_every", Kind::Int),
    ("registry", Kind::Str),
    ("data_dir", Kind::Str),
];

pub const REQUIRED: &[&str] = &["objective", "spec", "steps"];

/// Names of all accepted keys, in documentation order.
pub fn known_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().map(|(k, _)| *k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub objective: Objective,
    pub spec: String,
    pub steps: u64,
    pub seed: u64,
    /// Seed of the synthetic data generator, shared across objectives.
    pub data_seed: u64,
    pub deterministic: bool,
    pub temperature: f64,
    pub shuffle_rate: f64,
    pub label_mode: LabelMode,
    pub output_dir: PathBuf,
    /// Defaults to the spec's batch size.
    pub batch_size: Option<usize>,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_grad_norm: Option<f64>,
    pub probe_epochs: usize,
    pub probe_batch_size: usize,
    pub probe_standardize: bool,
    /// Synthetic split sizes; default to the spec's counts.
    pub num_train: Option<usize>,
    pub num_val: Option<usize>,
    pub noise_scale: Option<f64>,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub registry: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            objective: self.objective,
            temperature: self.temperature,
            shuffle_rate: self.shuffle_rate,
            label_mode: self.label_mode,
        }
    }

    pub fn optimizer(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, clip_grad_norm: self.clip_grad_norm, ..AdamConfig::pretrain() }
    }

    pub fn probe(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.probe_epochs,
            batch_size: self.probe_batch_size,
            standardize: self.probe_standardize,
            ..ProbeConfig::default()
        }
    }

    /// Canonical TOML rendering, used for the run snapshot.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable")
    }
}

/// Raw key/value pairs before typing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, toml::Value>,
}

fn kind_of(key: &str) -> Result<Kind> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, t)| *t).ok_or_else(|| {
        KitError::Config(format!("unknown key `{key}`; known keys: {}", known_keys().collect::<Vec<_>>().join(", ")))
    })
}

fn check_type(key: &str, v: &toml::Value) -> Result<toml::Value> {
    let kind = kind_of(key)?;
    let v = match (kind, v) {
        (Kind::Float, toml::Value::Integer(i)) => toml::Value::Float(*i as f64),
        (Kind::Str, toml::Value::String(_))
        | (Kind::Int, toml::Value::Integer(_))
        | (Kind::Float, toml::Value::Float(_))
        | (Kind::Bool, toml::Value::Boolean(_)) => v.clone(),
        _ => {
            return Err(KitError::Config(format!("key `{key}` expects {}, got `{v}`", kind.name())));
        }
    };
    Ok(v)
}

impl RawConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| KitError::Config(e.to_string()))?;
        let mut values = BTreeMap::new();
        for (k, v) in &table {
            values.insert(k.clone(), check_type(k, v)?);
        }
        Ok(Self { values })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(KitError::io(path))?;
        Self::from_toml_str(&text).map_err(|e| KitError::Config(format!("{}: {e}", path.display())))
    }

    /// Sets `key` from its command-line spelling; later calls win.
    pub fn set_flag(&mut self, key: &str, text: &str) -> Result<()> {
        let kind = kind_of(key)?;
        let bad = || KitError::Config(format!("flag --{} expects {}, got `{text}`", key.replace('_', "-"), kind.name()));
        let v = match kind {
            Kind::Str => toml::Value::String(text.to_string()),
            Kind::Int => toml::Value::Integer(text.parse().map_err(|_| bad())?),
            Kind::Float => toml::Value::Float(text.parse().map_err(|_| bad())?),
            Kind::Bool => toml::Value::Boolean(text.parse().map_err(|_| bad())?),
        };
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    /// Later values win.
    pub fn merge(mut self, other: RawConfig) -> Self {
        self.values.extend(other.values);
        self
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let missing: Vec<&str> = REQUIRED.iter().copied().filter(|k| !self.values.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(KitError::Config(format!("missing required keys: {}", missing.join(", "))));
        }
        let s = |k: &str| self.values.get(k).and_then(|v| v.as_str()).map(str::to_string);
        let i = |k: &str| -> Result<Option<u64>> {
            match self.values.get(k).and_then(|v| v.as_integer()) {
                Some(v) if v < 0 => Err(KitError::Config(format!("key `{k}` must be nonnegative, got {v}"))),
                other => Ok(other.map(|v| v as u64)),
            }
        };
        let f = |k: &str| self.values.get(k).and_then(|v| v.as_float());
        let b = |k: &str| self.values.get(k).and_then(|v| v.as_bool());
        let objective: Objective = s("objective").unwrap().parse().map_err(|e: unissl_core::Error| KitError::Config(e.to_string()))?;
        let label_mode: LabelMode = match s("label_mode") {
            Some(m) => m.parse().map_err(|e: unissl_core::Error| KitError::Config(e.to_string()))?,
            None => LabelMode::Literal,
        };
        let output_dir = s("output_dir")
            .or_else(|| std::env::var(OUTPUT_ROOT_ENV).ok())
            .unwrap_or_else(|| "runs".to_string())
            .into();
        let usize_of = |k: &str| -> Result<Option<usize>> { Ok(i(k)?.map(|v| v as usize)) };
        let cfg = RunConfig {
            objective,
            spec: s("spec").unwrap(),
            steps: i("steps")?.unwrap(),
            seed: i("seed")?.unwrap_or(0),
            data_seed: i("data_seed")?.unwrap_or(0),
            deterministic: b("deterministic").unwrap_or(true),
            temperature: f("temperature").unwrap_or(0.2),
            shuffle_rate: f("shuffle_rate").unwrap_or(0.15),
            label_mode,
            output_dir,
            batch_size: usize_of("batch_size")?,
            layers: usize_of("layers")?.unwrap_or(12),
            d_model: usize_of("d_model")?.unwrap_or(256),
            heads: usize_of("heads")?.unwrap_or(8),
            lr: f("lr").unwrap_or(1e-4),
            weight_decay: f("weight_decay").unwrap_or(1e-4),
            clip_grad_norm: f("clip_grad_norm"),
            probe_epochs: usize_of("probe_epochs")?.unwrap_or(100),
            probe_batch_size: usize_of("probe_batch_size")?.unwrap_or(256),
            probe_standardize: b("probe_standardize").unwrap_or(true),
            num_train: usize_of("num_train")?,
            num_val: usize_of("num_val")?,
            noise_scale: f("noise_scale"),
            checkpoint_every: i("checkpoint_every")?.unwrap_or(500),
            log_every: i("log_every")?.unwrap_or(50),
            registry: s("registry").map(PathBuf::from),
            data_dir: s("data_dir").map(PathBuf::from),
        };
        cfg.objective_config().validate().map_err(|e| KitError::Config(e.to_string()))?;
        cfg.optimizer().validate().map_err(|e| KitError::Config(e.to_string()))?;
        if cfg.batch_size == Some(0) || cfg.probe_batch_size == 0 {
            return Err(KitError::Config("batch sizes must be positive".into()));
        }
        if cfg.d_model == 0 || cfg.heads == 0 || cfg.layers == 0 || cfg.d_model % cfg.heads != 0 {
            return Err(KitError::Config(format!("heads ({}) must divide d_model ({})", cfg.heads, cfg.d_model)));
        }
        Ok(cfg)
    }
}
