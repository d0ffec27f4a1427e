//! Experiment configuration file.
//!
//! A TOML document with one section per subsystem. Every field has a
//! default, so a file only needs the values it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::model::{NetConfig, OptimConfig};
use crate::objectives::{Objective, VicregParams, DEFAULT_TEMPERATURE};
use crate::schedule::SchedulePolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    /// Frames fed to the encoder; two extra frames are sampled so that
    /// second differences can be truncated back to this length.
    pub frames: usize,
    pub stride: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { frames: 8, stride: 3 }
    }
}

impl ClipConfig {
    pub fn sampled_frames(&self) -> usize {
        self.frames + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Forces every schedule draw high, leaving only the deterministic step.
    pub freeze_random_diff: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 40, batch_size: 16, freeze_random_diff: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub gamma: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let v = VicregParams::default();
        Self { temperature: DEFAULT_TEMPERATURE, lambda: v.lambda, mu: v.mu, nu: v.nu, gamma: v.gamma, eps: v.eps }
    }
}

impl LossConfig {
    pub fn vicreg(&self) -> VicregParams {
        VicregParams { lambda: self.lambda, mu: self.mu, nu: self.nu, gamma: self.gamma, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub clips: usize,
    pub ks: Vec<usize>,
    /// Random crops for retrieval clips instead of the center crop.
    pub random_crop: bool,
    pub metric: Metric,
    pub probe_epochs: usize,
    pub probe_lr: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { clips: 10, ks: vec![1, 5, 10], random_crop: false, metric: Metric::Cosine, probe_epochs: 300, probe_lr: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub objective: Objective,
    pub schedule: SchedulePolicy,
    pub seed: u64,
    pub clip: ClipConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub net: NetConfig,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            objective: Objective::Vicreg,
            schedule: SchedulePolicy::Vididi,
            seed: 0,
            clip: ClipConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig { out_height: 16, out_width: 16, ..AugmentConfig::default() },
            net: NetConfig::default(),
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = match e.span() {
                Some(span) => {
                    let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "document".into(),
            };
            field_err(&field, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| field_err("document", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Number of warmup steps implied by the optimizer settings.
    pub fn warmup_epochs(&self) -> usize {
        self.optim.warmup_epochs.unwrap_or(if self.objective == Objective::Byol { 10 } else { 0 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip.frames == 0 {
            return Err(field_err("clip.frames", "must be at least 1"));
        }
        if self.clip.stride == 0 {
            return Err(field_err("clip.stride", "must be at least 1"));
        }
        if self.train.batch_size < 2 {
            return Err(field_err("train.batch_size", "need at least 2 clips per batch"));
        }
        self.augment.validate()?;
        self.net.validate()?;
        self.optim.validate()?;
        if !(self.loss.temperature > 0.0) {
            return Err(field_err("loss.temperature", format!("must be positive, got {}", self.loss.temperature)));
        }
        for (name, v) in [("loss.lambda", self.loss.lambda), ("loss.mu", self.loss.mu), ("loss.nu", self.loss.nu)] {
            if !(v >= 0.0) {
                return Err(field_err(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.loss.gamma > 0.0) || !(self.loss.eps >= 0.0) {
            return Err(field_err("loss.gamma", "gamma must be positive and eps non-negative"));
        }
        if self.eval.clips == 0 {
            return Err(field_err("eval.clips", "must be at least 1"));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(field_err("eval.ks", "need one or more positive k"));
        }
        if !(self.eval.probe_lr > 0.0) {
            return Err(field_err("eval.probe_lr", "must be positive"));
        }
        Ok(())
    }

    /// Applies a `key=value` override. Keys are dotted paths
    /// (`train.epochs`); a bare key resolves to a top-level field or to the
    /// unique section holding it (`epochs`).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| field_err(assignment, "override must look like key=value"))?;
        let (key, raw) = (key.trim(), raw.trim());
        let mut doc: toml::Table = toml::from_str(&self.to_toml_string()?).map_err(|e| field_err(key, e.to_string()))?;

        let path: Vec<String> = if key.contains('.') {
            key.split('.').map(str::to_string).collect()
        } else if doc.contains_key(key) {
            vec![key.to_string()]
        } else {
            let owners: Vec<String> = doc
                .iter()
                .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
                .map(|(k, _)| k.clone())
                .collect();
            match owners.as_slice() {
                [one] => vec![one.clone(), key.to_string()],
                [] if key == "warmup_epochs" => vec!["optim".into(), key.to_string()],
                [] => return Err(field_err(key, "unknown configuration key")),
                _ => return Err(field_err(key, format!("ambiguous key, qualify it with one of {owners:?}"))),
            }
        };

        let value = parse_value(raw);
        let (last, parents) = path.split_last().expect("non-empty path");
        let mut table = &mut doc;
        for p in parents {
            table = table
                .get_mut(p)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| field_err(key, "unknown configuration section"))?;
        }
        // warmup_epochs is omitted from the serialized form while unset.
        if !table.contains_key(last) && last != "warmup_epochs" {
            return Err(field_err(key, "unknown configuration key"));
        }
        table.insert(last.clone(), value);
        let text = toml::to_string(&doc).map_err(|e| field_err(key, e.to_string()))?;
        let updated: Self = toml::from_str(&text).map_err(|e| field_err(key, e.message().trim().to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // Try TOML syntax first (numbers, booleans, arrays, quoted strings).
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}
