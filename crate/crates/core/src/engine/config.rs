//! Training configuration, presets, TOML files and `key=value` overrides.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::archive::sha256_hex;
use crate::error::{Error, Result};
use crate::losses::{AttentionPrior, LossWeights};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: u64,
    pub lr: f64,
    /// Last epoch at full learning rate; the rate then falls linearly
    /// towards 0 at `epochs + 1`.
    pub decay_start_epoch: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decoupled decay on weights (biases excluded).
    pub weight_decay: f64,
    pub batch_size: usize,
    pub crop_size: usize,
    pub flip_probability: f64,
    pub seed: u64,
    pub gmm_components: usize,
    pub gmm_em_iters: usize,
    /// Refit the streak prior every this many epochs.
    pub gmm_refit_interval: u64,
    /// Residual values kept (by even striding) for each refit.
    pub gmm_max_samples: usize,
    /// Save a checkpoint every this many epochs (0 disables periodic saves;
    /// the final epoch is always saved when an output directory is set).
    pub checkpoint_interval: u64,
    /// Named-tensor archive with perceptual extractor weights; empty selects
    /// the built-in fixed extractor.
    pub perceptual_extractor: String,
    pub model: ModelConfig,
    pub losses: LossWeights,
    pub attention_prior: AttentionPrior,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 400,
            lr: 1e-4,
            decay_start_epoch: 200,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            batch_size: 1,
            crop_size: 216,
            flip_probability: 0.5,
            seed: 0,
            gmm_components: 3,
            gmm_em_iters: 20,
            gmm_refit_interval: 1,
            gmm_max_samples: 100_000,
            checkpoint_interval: 10,
            perceptual_extractor: String::new(),
            model: ModelConfig::default(),
            losses: LossWeights::default(),
            attention_prior: AttentionPrior::default(),
        }
    }
}

pub const PRESETS: [&str; 2] = ["paper", "toy"];

impl TrainingConfig {
    /// 64x64 crops, width-8 networks, 10 epochs (200 steps on 20 images
    /// per domain).
    pub fn toy() -> Self {
        TrainingConfig {
            epochs: 10,
            lr: 3e-3,
            decay_start_epoch: 5,
            crop_size: 64,
            checkpoint_interval: 5,
            model: ModelConfig::toy(),
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::default()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!("unknown preset {other:?}; expected one of {PRESETS:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("adam_eps must be positive and weight_decay non-negative".into());
        }
        if self.crop_size < crate::imaging::MIN_SIDE {
            return bad(format!("crop_size must be at least {}", crate::imaging::MIN_SIDE));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability must lie in [0, 1]".into());
        }
        if self.gmm_components == 0 || self.gmm_em_iters == 0 || self.gmm_refit_interval == 0 {
            return bad("gmm_components, gmm_em_iters and gmm_refit_interval must be at least 1".into());
        }
        if self.gmm_max_samples < self.gmm_components {
            return bad("gmm_max_samples must be at least gmm_components".into());
        }
        self.model.validate()?;
        self.losses.validate()
    }

    /// Learning-rate multiplier for 1-based `epoch`.
    pub fn lr_factor(&self, epoch: u64) -> f64 {
        if epoch <= self.decay_start_epoch || self.epochs <= self.decay_start_epoch {
            return 1.0;
        }
        let span = (self.epochs - self.decay_start_epoch + 1) as f64;
        (1.0 - (epoch - self.decay_start_epoch) as f64 / span).max(0.0)
    }

    pub fn lr_at(&self, epoch: u64) -> f64 {
        self.lr * self.lr_factor(epoch)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    toml::Table::try_from(value).map_err(|e| Error::Config(e.to_string()))
}

fn from_table<T: DeserializeOwned>(table: toml::Table) -> Result<T> {
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

/// Merge `overlay` into `base`; every overlay key must already exist.
fn merge(base: &mut toml::Table, overlay: toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in overlay {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (None, _) => return Err(Error::Config(format!("unknown config key {path:?}"))),
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &path)?,
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

/// Overlay a TOML document onto `base`, rejecting unknown keys.
pub fn apply_toml<T: Serialize + DeserializeOwned>(base: &T, text: &str) -> Result<T> {
    let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let mut table = to_table(base)?;
    merge(&mut table, overlay, "")?;
    from_table(table)
}

/// Apply `key=value` overrides; keys are dotted paths (`losses.lambda_p`).
/// Values are parsed as TOML, falling back to a bare string.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(base: &T, overrides: &[String]) -> Result<T> {
    let mut table = to_table(base)?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not of the form key=value")))?;
        let key = key.trim();
        let value = format!("v = {}", raw.trim())
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        let unknown = || Error::Config(format!("unknown config key {key:?}"));
        let (parents, leaf) = match key.rsplit_once('.') {
            Some((p, l)) => (p.split('.').collect::<Vec<_>>(), l),
            None => (Vec::new(), key),
        };
        let mut cursor = &mut table;
        for part in parents {
            cursor = match cursor.get_mut(part) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(unknown()),
            };
        }
        match cursor.get_mut(leaf) {
            Some(toml::Value::Table(_)) | None => return Err(unknown()),
            Some(slot) => *slot = value,
        }
    }
    from_table(table)
}
