//! Flat TOML run configuration: per-command allowed keys, typed lookups with
//! defaults, and the resolved document echoed next to the outputs.
//!
//! Precedence, lowest to highest: built-in defaults, the config file, flags.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use sscxr_core::gmml::{CorruptionMode, CorruptionSpec};
use sscxr_core::nn::AdamWConfig;
use sscxr_core::pretrain::{DecoderConfig, LossReduction};
use sscxr_core::vit::EncoderConfig;

use crate::CliError;

pub const ENCODER_KEYS: &[&str] = &[
    "image_size",
    "patch_size",
    "embed_dim",
    "depth",
    "num_heads",
    "mlp_ratio",
    "use_class_token",
];

const TRAIN_KEYS: &[&str] = &[
    "manifest",
    "out_dir",
    "seed",
    "learning_rate",
    "weight_decay",
    "min_lr",
    "epochs",
    "batch_size",
];

pub const PRETRAIN_KEYS: &[&str] = &[
    "decoder_hidden",
    "decoder_bottleneck",
    "loss_reduction",
    "augment",
    "checkpoint_every",
    "resume",
    "noise_fraction",
    "alien_fraction",
    "corruption_mode",
    "group_aspect_min",
    "group_aspect_max",
    "group_area_min",
    "group_area_max",
];

pub const FINETUNE_KEYS: &[&str] = &[
    "task",
    "init",
    "linear_probe",
    "class_weights",
    "augment",
    "num_classes",
    "tap_layers",
    "base_width",
    "overlays",
];

pub const EVAL_KEYS: &[&str] = &["task", "checkpoint", "manifests", "cohorts", "out_dir", "batch_size"];

pub const HEATMAP_KEYS: &[&str] = &["checkpoint", "images", "manifest", "out_dir", "layer", "head"];

/// A configuration table restricted to one command's keys.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub table: Table,
    allowed: Vec<&'static str>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl RunConfig {
    pub fn new(allowed: &[&[&'static str]]) -> Self {
        RunConfig {
            table: Table::new(),
            allowed: allowed.iter().flat_map(|k| k.iter().copied()).collect(),
        }
    }

    /// Reads `path`, rejecting keys this command does not know.
    pub fn load(mut self, path: Option<&Path>) -> Result<Self, CliError> {
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
            let table: Table = text
                .parse()
                .map_err(|e| invalid(format!("config {} is not valid TOML: {e}", path.display())))?;
            for (k, v) in table {
                self.check_key(&k)?;
                if v.is_table() {
                    return Err(invalid(format!("config key `{k}` must be a plain value, not a table")));
                }
                self.table.insert(k, v);
            }
        }
        Ok(self)
    }

    fn check_key(&self, key: &str) -> Result<(), CliError> {
        if self.allowed.contains(&key) {
            Ok(())
        } else {
            Err(invalid(format!("unknown config key `{key}`")))
        }
    }

    /// Overrides a value when the flag was given.
    pub fn set(&mut self, key: &str, value: Option<impl Into<Value>>) {
        debug_assert!(self.allowed.contains(&key), "{key}");
        if let Some(v) = value {
            self.table.insert(key.to_string(), v.into());
        }
    }

    fn fill<V: Into<Value>>(&mut self, key: &str, default: V) -> &Value {
        self.table.entry(key.to_string()).or_insert_with(|| default.into())
    }

    pub fn usize(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.fill(key, default as i64) {
            Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            other => Err(invalid(format!("`{key}` must be a non-negative integer, got {other}"))),
        }
    }

    pub fn u64(&mut self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.fill(key, default as i64) {
            Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            other => Err(invalid(format!("`{key}` must be a non-negative integer, got {other}"))),
        }
    }

    pub fn f64(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.fill(key, default) {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            other => Err(invalid(format!("`{key}` must be a number, got {other}"))),
        }
    }

    pub fn bool(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.fill(key, default) {
            Value::Boolean(b) => Ok(*b),
            other => Err(invalid(format!("`{key}` must be true or false, got {other}"))),
        }
    }

    pub fn string(&mut self, key: &str, default: &str) -> Result<String, CliError> {
        match self.fill(key, default) {
            Value::String(s) => Ok(s.clone()),
            other => Err(invalid(format!("`{key}` must be a string, got {other}"))),
        }
    }

    pub fn required_string(&self, key: &str) -> Result<String, CliError> {
        match self.table.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(invalid(format!("`{key}` must be a string, got {other}"))),
            None => Err(invalid(format!("missing required setting `{key}`"))),
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.required_string(key).map(PathBuf::from)
    }

    pub fn optional_string(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(_) => self.required_string(key).map(Some),
        }
    }

    pub fn usize_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>, CliError> {
        let default: Vec<Value> = default.iter().map(|&v| Value::Integer(v as i64)).collect();
        match self.fill(key, Value::Array(default)) {
            Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    other => Err(invalid(format!("`{key}` entries must be non-negative integers, got {other}"))),
                })
                .collect(),
            other => Err(invalid(format!("`{key}` must be an array of integers, got {other}"))),
        }
    }

    pub fn string_list(&mut self, key: &str) -> Result<Vec<String>, CliError> {
        match self.fill(key, Value::Array(Vec::new())) {
            Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    other => Err(invalid(format!("`{key}` entries must be strings, got {other}"))),
                })
                .collect(),
            other => Err(invalid(format!("`{key}` must be an array of strings, got {other}"))),
        }
    }

    pub fn encoder(&mut self) -> Result<EncoderConfig, CliError> {
        let d = EncoderConfig::default();
        let cfg = EncoderConfig {
            image_size: self.usize("image_size", d.image_size)?,
            patch_size: self.usize("patch_size", d.patch_size)?,
            embed_dim: self.usize("embed_dim", d.embed_dim)?,
            depth: self.usize("depth", d.depth)?,
            num_heads: self.usize("num_heads", d.num_heads)?,
            mlp_ratio: self.f64("mlp_ratio", d.mlp_ratio)?,
            use_class_token: self.bool("use_class_token", d.use_class_token)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn optimizer(&mut self, lr: f64, wd: f64) -> Result<(AdamWConfig, f64), CliError> {
        let opt = AdamWConfig::new(self.f64("learning_rate", lr)?, self.f64("weight_decay", wd)?);
        Ok((opt, self.f64("min_lr", 1e-6)?))
    }

    pub fn decoder(&mut self) -> Result<DecoderConfig, CliError> {
        let d = DecoderConfig::default();
        let hidden = self.usize_list("decoder_hidden", &[d.hidden_dims.0, d.hidden_dims.1])?;
        let [h1, h2] = hidden[..] else {
            return Err(invalid("`decoder_hidden` must hold exactly two widths"));
        };
        let cfg = DecoderConfig {
            hidden_dims: (h1, h2),
            bottleneck_dim: self.usize("decoder_bottleneck", d.bottleneck_dim)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn corruption(&mut self) -> Result<CorruptionSpec, CliError> {
        let d = CorruptionSpec::default();
        let mode: CorruptionMode = self.string("corruption_mode", &d.mode.to_string())?.parse()?;
        let spec = CorruptionSpec {
            noise_fraction: self.f64("noise_fraction", d.noise_fraction)?,
            alien_fraction: self.f64("alien_fraction", d.alien_fraction)?,
            mode,
            group_aspect: (
                self.f64("group_aspect_min", d.group_aspect.0)?,
                self.f64("group_aspect_max", d.group_aspect.1)?,
            ),
            group_area: (
                self.usize("group_area_min", d.group_area.0)?,
                self.usize("group_area_max", d.group_area.1)?,
            ),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn loss_reduction(&mut self) -> Result<LossReduction, CliError> {
        Ok(self.string("loss_reduction", "mean-masked")?.parse()?)
    }

    /// Writes the fully resolved table as `resolved_config.toml` in `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string(&self.table).map_err(|e| CliError::Runtime(e.to_string()))?;
        let path = dir.join("resolved_config.toml");
        std::fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}


pub(crate) fn train_keys() -> &'static [&'static str] {
    TRAIN_KEYS
}
