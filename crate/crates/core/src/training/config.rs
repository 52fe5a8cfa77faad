//! Training configuration, read from TOML.
//!
//! ```toml
//! head = "denoise"          # or "outlier"
//! loss = "l_a"              # l_o for the outlier head; l_a, l_b, l_c, l_s, l_r to denoise
//! epochs = 20
//! batch_size = 64
//! patches_per_shape_per_epoch = 2000
//! master_seed = 7
//! checkpoint_every = 5
//! # learning_rate and init_scheme default per head
//!
//! [optimizer]
//! kind = "adam"             # or "sgd"
//!
//! [model]
//! preset = "tiny"           # or "pcpnet"
//! m = 64
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{DenoiseLoss, LossConfig};
use crate::model::config::{HeadKind, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainHead {
    Outlier,
    Denoise,
}

impl TrainHead {
    pub fn model_head(self) -> HeadKind {
        match self {
            TrainHead::Outlier => HeadKind::Outlier,
            TrainHead::Denoise => HeadKind::Displacement,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainLoss {
    #[serde(rename = "l_o")]
    Outlier,
    #[serde(rename = "l_a")]
    Combined,
    #[serde(rename = "l_b")]
    FixedTarget,
    #[serde(rename = "l_c")]
    Baseline,
    #[serde(rename = "l_s")]
    Proximity,
    #[serde(rename = "l_r")]
    Regularity,
}

impl TrainLoss {
    pub fn denoise(self) -> Option<DenoiseLoss> {
        Some(match self {
            TrainLoss::Outlier => return None,
            TrainLoss::Combined => DenoiseLoss::Combined,
            TrainLoss::FixedTarget => DenoiseLoss::FixedTarget,
            TrainLoss::Baseline => DenoiseLoss::Baseline,
            TrainLoss::Proximity => DenoiseLoss::Proximity,
            TrainLoss::Regularity => DenoiseLoss::Regularity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Uniform in `±sqrt(6 / fan_in)`, biases zero.
    KaimingUniform,
    /// Uniform in `±0.001`, biases zero.
    SmallUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient when its global norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    Tiny,
    Pcpnet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_preset")]
    pub preset: ModelPreset,
    /// Overrides the preset's patch cardinality.
    #[serde(default)]
    pub m: Option<usize>,
}

fn default_preset() -> ModelPreset {
    ModelPreset::Tiny
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: ModelPreset::Tiny,
            m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub head: TrainHead,
    pub loss: TrainLoss,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub init_scheme: Option<InitScheme>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patches")]
    pub patches_per_shape_per_epoch: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Write a checkpoint every this many epochs (0 disables periodic ones).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_radius")]
    pub radius_fraction: f64,
    /// Validate every this many epochs (validation also runs after the last).
    #[serde(default = "default_one")]
    pub validate_every: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub loss_config: LossConfig,
    #[serde(default)]
    pub model: ModelSection,
}

fn default_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    64
}
fn default_patches() -> usize {
    1000
}
fn default_radius() -> f64 {
    0.05
}
fn default_one() -> usize {
    1
}

impl TrainConfig {
    pub fn new(head: TrainHead, loss: TrainLoss) -> Self {
        Self {
            head,
            loss,
            learning_rate: None,
            init_scheme: None,
            epochs: default_epochs(),
            batch_size: default_batch(),
            patches_per_shape_per_epoch: default_patches(),
            master_seed: 0,
            checkpoint_every: 0,
            radius_fraction: default_radius(),
            validate_every: 1,
            optimizer: OptimizerConfig::default(),
            loss_config: LossConfig::default(),
            model: ModelSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.head {
            TrainHead::Outlier => 1e-4,
            TrainHead::Denoise => 1e-8,
        })
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init_scheme.unwrap_or(match self.head {
            TrainHead::Outlier => InitScheme::KaimingUniform,
            TrainHead::Denoise => InitScheme::SmallUniform,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        let head = self.head.model_head();
        let mut c = match self.model.preset {
            ModelPreset::Tiny => ModelConfig::tiny(head),
            ModelPreset::Pcpnet => ModelConfig::pcpnet(head),
        };
        if let Some(m) = self.model.m {
            c.m = m;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (self.head, self.loss) {
            (TrainHead::Outlier, TrainLoss::Outlier) => {}
            (TrainHead::Denoise, l) if l != TrainLoss::Outlier => {}
            (h, l) => return bad(format!("loss {l:?} does not fit the {h:?} head")),
        }
        let lr = self.learning_rate();
        if !(lr > 0.0) || !lr.is_finite() {
            return bad(format!("learning_rate must be positive, got {lr}"));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patches_per_shape_per_epoch == 0 {
            return bad("patches_per_shape_per_epoch must be >= 1".into());
        }
        if !(self.radius_fraction > 0.0) {
            return bad("radius_fraction must be positive".into());
        }
        if self.validate_every == 0 {
            return bad("validate_every must be >= 1".into());
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.momentum)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
        {
            return bad("momentum and betas must lie in [0, 1)".into());
        }
        self.loss_config.validate()?;
        self.model_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_per_head() {
        let o = TrainConfig::new(TrainHead::Outlier, TrainLoss::Outlier);
        assert_eq!(o.learning_rate(), 1e-4);
        assert_eq!(o.init_scheme(), InitScheme::KaimingUniform);
        let d = TrainConfig::new(TrainHead::Denoise, TrainLoss::Combined);
        assert_eq!(d.learning_rate(), 1e-8);
        assert_eq!(d.init_scheme(), InitScheme::SmallUniform);
        assert_eq!(d.optimizer.kind, OptimizerKind::Sgd);
        assert_eq!(d.optimizer.momentum, 0.9);
    }

    #[test]
    fn parses_toml() {
        let c = TrainConfig::from_toml(
            "head = \"denoise\"\nloss = \"l_b\"\nepochs = 3\nlearning_rate = 0.001\n[optimizer]\nkind = \"adam\"\n[model]\nm = 32\n",
        )
        .unwrap();
        assert_eq!(c.loss, TrainLoss::FixedTarget);
        assert_eq!(c.model_config().m, 32);
        assert_eq!(c.optimizer.kind, OptimizerKind::Adam);
    }

    #[test]
    fn rejects_mismatched_head_and_loss() {
        assert!(TrainConfig::from_toml("head = \"outlier\"\nloss = \"l_a\"\n").is_err());
        assert!(TrainConfig::from_toml("head = \"denoise\"\nloss = \"l_o\"\n").is_err());
        assert!(
            TrainConfig::from_toml("head = \"denoise\"\nloss = \"l_a\"\nbatch_size = 0\n").is_err()
        );
        assert!(TrainConfig::from_toml("head = \"denoise\"\nloss = \"l_a\"\nbogus = 1\n").is_err());
    }
}
