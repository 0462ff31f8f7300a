use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::PretrainConfig;
use crate::diversify::{LangevinConfig, ResidualMode, DEFAULT_SMOOTH_WINDOW};
use crate::error::{Error, Result};
use crate::memory::{DEFAULT_GAMMA, DEFAULT_SLOTS};
use crate::losses::LossWeights;
use crate::metrics::DEFAULT_DIVERSITY_PAIRS;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub proto_slots: usize,
    pub proto_gamma: f64,
    /// EMA-refine prototype slots during stage-two training.
    pub proto_ema: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            proto_slots: DEFAULT_SLOTS,
            proto_gamma: DEFAULT_GAMMA,
            proto_ema: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub w_dim: usize,
    pub hidden: usize,
    pub header_hidden: usize,
    pub sigma_w: f64,
    pub residual: ResidualMode,
    /// Samples per input for diversity during evaluation.
    pub samples: usize,
    pub diversity_pairs: usize,
    pub smooth_window: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            w_dim: 32,
            hidden: 256,
            header_hidden: 64,
            sigma_w: 1.0,
            residual: ResidualMode::L1,
            samples: 10,
            diversity_pairs: DEFAULT_DIVERSITY_PAIRS,
            smooth_window: DEFAULT_SMOOTH_WINDOW,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Extra synthetic sequences mixed into the autoencoder training frames.
    pub synthetic_sequences: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            epochs: p.epochs,
            batch_size: p.batch_size,
            lr: p.lr,
            synthetic_sequences: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Pre-trained autoencoder checkpoint; pretraining runs inline if absent.
    pub pretrained_ckpt: Option<PathBuf>,
    pub model: ModelConfig,
    /// Stage-one loss term weights.
    pub loss: LossWeights,
    pub memory: MemoryConfig,
    pub mcmc: LangevinConfig,
    pub stage2: Stage2Config,
    pub pretrain: PretrainSection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            clip_norm: 1.0,
            pretrained_ckpt: None,
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            memory: MemoryConfig::default(),
            mcmc: LangevinConfig::default(),
            stage2: Stage2Config::default(),
            pretrain: PretrainSection::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        positive("lr", self.lr)?;
        positive("clip_norm", self.clip_norm)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.mcmc.validate()?;
        if self.memory.proto_slots == 0 || !(0.0..=1.0).contains(&self.memory.proto_gamma) {
            return Err(Error::Config("memory.proto_slots must be positive and proto_gamma in [0, 1]".into()));
        }
        let s = &self.stage2;
        if s.w_dim == 0 || s.hidden == 0 || s.header_hidden == 0 || s.samples == 0 || s.diversity_pairs == 0 {
            return Err(Error::Config("stage2 sizes must be positive".into()));
        }
        positive("stage2.sigma_w", s.sigma_w)?;
        if s.smooth_window % 2 == 0 {
            return Err(Error::Config("stage2.smooth_window must be odd".into()));
        }
        self.pretrain_config().validate()
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
            lr: self.pretrain.lr,
            seed: self.seed,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config; relative `pretrained_ckpt` paths resolve against
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(p), Some(dir)) = (cfg.pretrained_ckpt.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }
}
