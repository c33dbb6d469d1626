//! Run configuration: one JSON document with sections
//! `data`, `model`, `loss`, `queue`, `optimizer` and `experiment`.
//! Every field has a default, so `{}` is a valid config.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::DataConfig;
use crate::encoders::{EncoderDims, TextFeaturizer};
use crate::error::{Error, Result};
use crate::evalkit::ProbeConfig;
use crate::memqueue::DEFAULT_CAPACITY;
use crate::optim::AdamWConfig;
use crate::wscloss::TAU_INIT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub text: TextFeaturizer,
    pub init_tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            proj_dim: 64,
            text: TextFeaturizer::default(),
            init_tau: TAU_INIT,
        }
    }
}

impl ModelConfig {
    pub fn image_dims(&self, input_dim: usize) -> EncoderDims {
        EncoderDims {
            input_dim,
            hidden_dim: self.hidden_dim,
            proj_dim: self.proj_dim,
        }
    }

    pub fn text_dims(&self) -> EncoderDims {
        EncoderDims {
            input_dim: self.text.hash_dim,
            hidden_dim: self.hidden_dim,
            proj_dim: self.proj_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight negatives by `1 − s`; when false, `s ≡ 0` (plain InfoNCE).
    pub label_weighting: bool,
    pub learn_temperature: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            label_weighting: true,
            learn_temperature: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueConfig {
    pub enabled: bool,
    pub capacity: usize,
    pub momentum: f64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            capacity: 192,
            momentum: 0.75,
        }
    }
}

/// Which loss terms a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// In-batch InfoNCE, no queue.
    Baseline,
    /// Label-weighted in-batch loss.
    #[serde(rename = "SA")]
    Sa,
    /// InfoNCE plus the momentum queue terms.
    #[serde(rename = "BE")]
    Be,
    #[serde(rename = "SA+BE")]
    SaBe,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Sa, Variant::Be, Variant::SaBe];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Sa => "SA",
            Variant::Be => "BE",
            Variant::SaBe => "SA+BE",
        }
    }

    pub fn label_weighting(self) -> bool {
        matches!(self, Variant::Sa | Variant::SaBe)
    }

    pub fn queue(self) -> bool {
        matches!(self, Variant::Be | Variant::SaBe)
    }

    /// Copy of `cfg` with the loss and queue switches set for this variant.
    pub fn apply(self, cfg: &Config) -> Config {
        let mut c = cfg.clone();
        c.loss.label_weighting = self.label_weighting();
        c.queue.enabled = self.queue();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Evaluate every this many epochs (the last epoch is always evaluated).
    pub eval_every: usize,
    pub mle_targets: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub linear_probe: bool,
    /// Cap on training records used to fit the probe.
    pub probe_train_limit: usize,
    pub probe: ProbeConfig,
    /// Save a checkpoint every this many epochs; 0 saves only the final state.
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 64,
            epochs: 30,
            eval_every: 1,
            mle_targets: vec![0.05, 0.075, 0.1, 0.125, 0.15],
            seeds: vec![0, 1, 2, 3, 4],
            variants: vec![Variant::Baseline, Variant::Sa, Variant::SaBe],
            linear_probe: true,
            probe_train_limit: 1000,
            probe: ProbeConfig::default(),
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub queue: QueueConfig,
    pub optimizer: AdamWConfig,
    pub experiment: ExperimentConfig,
}

impl Config {
    /// Batch size and queue length of the original large-scale setup.
    pub fn paper_scale() -> Self {
        let mut c = Self::default();
        c.experiment.batch_size = 256;
        c.queue.capacity = DEFAULT_CAPACITY;
        c.model.proj_dim = 512;
        c
    }

    /// Short schedule for the label-entropy sweep on the toy encoders: a
    /// larger step size, ten epochs, a slower momentum encoder and no probe.
    pub fn desk_sweep() -> Self {
        let mut c = Self::default();
        c.optimizer.lr = 2e-3;
        c.experiment.epochs = 10;
        c.experiment.linear_probe = false;
        c.queue.momentum = 0.9;
        c
    }

    /// Tiny dimensions for finite-difference gradient checks.
    pub fn grad_check_toy() -> Self {
        let mut c = Self::default();
        c.model.hidden_dim = 5;
        c.model.proj_dim = 4;
        c.model.text.hash_dim = 12;
        c.data = DataConfig {
            size: 40,
            num_classes: 4,
            input_dim: 6,
            mle_target: Some(0.1),
            ..Default::default()
        };
        c.experiment.batch_size = 6;
        c.queue.capacity = 9;
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Config = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `key.path=value` overrides. Values are parsed as JSON and fall
    /// back to a plain string; unknown keys are rejected.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        let c: Config = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        let e = &self.experiment;
        if e.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if e.epochs == 0 || e.eval_every == 0 {
            return Err(Error::Config("epochs and eval_every must be positive".into()));
        }
        if self.queue.capacity == 0 || !(0.0..1.0).contains(&self.queue.momentum) {
            return Err(Error::Config("queue capacity must be positive and momentum in [0, 1)".into()));
        }
        if !(self.model.init_tau > 0.0) || self.model.proj_dim == 0 || self.model.hidden_dim == 0 {
            return Err(Error::Config("model dims and init_tau must be positive".into()));
        }
        Ok(())
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part:?} is not inside an object")))?;
        if !obj.contains_key(*part) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).expect("checked");
    }
    Err(Error::Config("empty override key".into()))
}
