//! Run configuration: one TOML file holding every knob of a training and
//! evaluation run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AugmentPolicy;
use crate::error::{Error, Result};
use crate::features::{frame_count, FrameSpec};
use crate::losses::LossConfig;
use crate::nn::{EncoderConfig, InitScheme, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Test-time embedding extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_crops: usize,
    /// Repeat-extension and random reversal on test crops.
    pub augment: bool,
}

/// How a margin head is seeded from a softmax checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmStartConfig {
    /// Allow margin losses to train from scratch.
    pub allow_cold_start: bool,
    /// Norm given to each transferred class vector for the logistic margin head.
    pub logistic_scale: f64,
    /// Schedule for runs that start from a warm-start checkpoint; the main
    /// schedule is used when absent.
    #[serde(default)]
    pub finetune: Option<LrSchedule>,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            allow_cold_start: false,
            logistic_scale: 50.0,
            finetune: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub init: InitScheme,
    pub features: FrameSpec,
    /// Training crops; `enabled = false` gives plain zero-padded crops.
    pub augment: AugmentPolicy,
    pub eval: EvalConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    #[serde(default)]
    pub warm_start: WarmStartConfig,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
}

impl RunConfig {
    /// Full-size setup: ResNet-20 on 3.015 s crops, batch 50, 22 steps of 2800
    /// iterations decaying by 0.75.
    pub fn full(embedding_dim: usize) -> Result<Self> {
        let features = FrameSpec::default();
        let crop_len = 48240;
        let frames = frame_count(crop_len, &features)?;
        Ok(Self {
            seed: 0,
            batch_size: 50,
            init: InitScheme::He,
            features,
            augment: AugmentPolicy::new(crop_len, 0.5, true)?,
            eval: EvalConfig {
                n_crops: 50,
                augment: true,
            },
            optimizer: OptimizerConfig {
                momentum: 0.93,
                weight_decay: 0.0005,
            },
            schedule: LrSchedule::new(0.05, 0.75, 22, 2800)?,
            warm_start: WarmStartConfig::default(),
            loss: LossConfig::Softmax,
            encoder: EncoderConfig::resnet20(embedding_dim, (frames, features.n_bins()))?,
        })
    }

    /// Small configuration that trains on the synthetic corpus in minutes on
    /// one core: half-second crops and a four-layer conv stack (widths 8/16/16/32).
    pub fn desk() -> Result<Self> {
        let features = FrameSpec::default();
        let crop_len = 8000;
        let frames = frame_count(crop_len, &features)?;
        Ok(Self {
            seed: 0,
            batch_size: 16,
            init: InitScheme::He,
            features,
            augment: AugmentPolicy::new(crop_len, 0.5, true)?,
            eval: EvalConfig {
                n_crops: 10,
                augment: true,
            },
            optimizer: OptimizerConfig {
                momentum: 0.9,
                weight_decay: 0.0005,
            },
            schedule: LrSchedule::new(0.02, 0.8, 8, 200)?,
            warm_start: WarmStartConfig {
                finetune: Some(LrSchedule::new(0.005, 0.75, 2, 100)?),
                ..WarmStartConfig::default()
            },
            loss: LossConfig::Softmax,
            encoder: EncoderConfig::desk(32, (frames, features.n_bins()), &[8, 16, 16, 32], None)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.augment.validate()?;
        self.schedule.validate()?;
        self.loss.validate()?;
        self.encoder.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval.n_crops == 0 {
            return Err(Error::Config("eval.n_crops must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.optimizer.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if let Some(s) = &self.warm_start.finetune {
            s.validate()?;
        }
        if !(self.warm_start.logistic_scale > 0.0) {
            return Err(Error::Config("warm_start.logistic_scale must be positive".into()));
        }
        let expected = (
            frame_count(self.augment.crop_len, &self.features)?,
            self.features.n_bins(),
        );
        if self.encoder.input_shape != expected {
            return Err(Error::Config(format!(
                "encoder input {:?} but crops of {} samples give {:?}",
                self.encoder.input_shape, self.augment.crop_len, expected
            )));
        }
        Ok(())
    }

    /// Crop policy used when extracting test embeddings.
    pub fn test_policy(&self) -> AugmentPolicy {
        self.augment.with_enabled(self.eval.augment)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Same network with a different embedding size.
    pub fn with_embedding_dim(&self, dim: usize) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.encoder.embedding_dim = dim;
        for layer in cfg.encoder.layers.iter_mut().rev() {
            if let crate::nn::LayerConfig::Dense { out_dim } = layer {
                *out_dim = dim;
                break;
            }
        }
        cfg.encoder.validate()?;
        Ok(cfg)
    }

    /// Inserts, replaces or removes (`p = 0`) the dropout before the embedding layer.
    pub fn with_dropout(&self, p: f64) -> Result<Self> {
        use crate::nn::LayerConfig;
        let mut cfg = self.clone();
        let layers = &mut cfg.encoder.layers;
        layers.retain(|l| !matches!(l, LayerConfig::Dropout { .. }));
        if p > 0.0 {
            let dense = layers
                .iter()
                .rposition(|l| matches!(l, LayerConfig::Dense { .. }))
                .ok_or_else(|| Error::Config("encoder has no embedding layer".into()))?;
            layers.insert(dense, LayerConfig::Dropout { p });
        }
        cfg.encoder.validate()?;
        Ok(cfg)
    }
}
