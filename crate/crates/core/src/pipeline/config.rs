use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, DatasetSpec};
use crate::error::{Error, Result};
use crate::losses::{IdentityForm, LossWeights};
use crate::models::{EncoderConfig, GanConfig};
use crate::tensor::AdamConfig;

/// Learning rate and decay horizon for one optimizer. Without
/// `total_steps` the horizon is the number of steps the stage will take.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSettings {
    pub base_lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<usize>,
}

impl OptimSettings {
    pub fn new(base_lr: f64) -> Self {
        Self {
            base_lr,
            total_steps: None,
        }
    }

    pub fn adam(&self, planned_steps: usize) -> AdamConfig {
        AdamConfig::new(
            self.base_lr,
            self.total_steps.unwrap_or(planned_steps).max(1),
        )
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.base_lr > 0.0) || self.total_steps == Some(0) {
            return Err(Error::contract(format!(
                "optimizer `{name}`: base_lr must be > 0 and total_steps ≥ 1"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub pretrain: OptimSettings,
    pub finetune: OptimSettings,
    pub generators: OptimSettings,
    pub discriminators: OptimSettings,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            pretrain: OptimSettings::new(1e-3),
            finetune: OptimSettings::new(5e-4),
            generators: OptimSettings::new(1e-3),
            discriminators: OptimSettings::new(1e-3),
        }
    }
}

/// Full run configuration, read from one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub cyclegan_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    /// Night images per CycleGAN step, each paired with one day image.
    pub cyclegan_batch_size: usize,
    /// Interleave CycleGAN updates with the fine-tuning batches instead of
    /// keeping the generators frozen.
    pub finetune_generators: bool,
    /// Whether the CycleGAN identity term applies each generator to its
    /// source or its target domain.
    pub identity_form: IdentityForm,
    pub optimizers: OptimizerConfig,
    pub loss_weights: LossWeights,
    pub augmentation: AugmentConfig,
    pub model: EncoderConfig,
    pub gan: GanConfig,
    /// Used by `gen-data`; the image side must match `model.image_size`.
    pub data: DatasetSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            pretrain_epochs: 12,
            cyclegan_epochs: 12,
            finetune_epochs: 5,
            batch_size: 16,
            cyclegan_batch_size: 1,
            finetune_generators: false,
            identity_form: IdentityForm::default(),
            optimizers: OptimizerConfig::default(),
            loss_weights: LossWeights::default(),
            augmentation: AugmentConfig::default(),
            model: EncoderConfig::default(),
            gan: GanConfig::default(),
            data: DatasetSpec::default(),
        }
    }
}

impl PipelineConfig {
    /// A few-second configuration for tests and demos.
    pub fn smoke() -> Self {
        Self {
            pretrain_epochs: 1,
            cyclegan_epochs: 1,
            finetune_epochs: 1,
            batch_size: 4,
            cyclegan_batch_size: 1,
            model: EncoderConfig {
                image_size: 16,
                patch_size: 4,
                embed_dim: 16,
                num_layers: 1,
                num_heads: 2,
                proj_dim: 8,
                ..EncoderConfig::default()
            },
            gan: GanConfig { base_channels: 4 },
            data: DatasetSpec {
                image_size: 16,
                train: 2,
                val: 1,
                test: 1,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pretrain_epochs", self.pretrain_epochs),
            ("cyclegan_epochs", self.cyclegan_epochs),
            ("finetune_epochs", self.finetune_epochs),
        ] {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be ≥ 1")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::contract(format!(
                "batch_size must be ≥ 2, got {}",
                self.batch_size
            )));
        }
        if self.cyclegan_batch_size == 0 {
            return Err(Error::contract("cyclegan_batch_size must be ≥ 1"));
        }
        self.optimizers.pretrain.validate("pretrain")?;
        self.optimizers.finetune.validate("finetune")?;
        self.optimizers.generators.validate("generators")?;
        self.optimizers.discriminators.validate("discriminators")?;
        self.loss_weights.validate()?;
        self.augmentation.validate()?;
        self.model.validate()?;
        if self.data.image_size != self.model.image_size {
            return Err(Error::contract(format!(
                "data.image_size {} differs from model.image_size {}",
                self.data.image_size, self.model.image_size
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
