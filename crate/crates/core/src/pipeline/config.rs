use serde::{Deserialize, Serialize};

use crate::dec::LossWeights;
use crate::nn::AdamConfig;

/// Optimizer and schedule of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Write a numbered checkpoint every this many epochs; 0 keeps only the
    /// resume checkpoint and the final or best model.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 128,
            learning_rate: 4e-5,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            clip_norm: 5.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self, section: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push(format!("{section}.epochs must be positive"));
        }
        if self.batch_size < 2 {
            errs.push(format!(
                "{section}.batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            errs.push(format!(
                "{section}.learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            errs.push(format!(
                "{section}.weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("{section}.{k} must be in [0, 1), got {b}"));
            }
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            errs.push(format!("{section}.clip_norm must be >= 0, got {}", self.clip_norm));
        }
        errs
    }
}

/// Stage A: reconstruction plus disentanglement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct AutoencoderConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            train: TrainConfig {
                epochs: 200,
                learning_rate: 5e-4,
                weight_decay: 0.0,
                ..TrainConfig::default()
            },
            alpha: 1.0,
            gamma: 0.001,
        }
    }
}

impl AutoencoderConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: 0.0,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self, section: &str) -> Vec<String> {
        let mut errs = self.train.validate(section);
        errs.extend(self.weights().validate(section));
        errs
    }
}

/// Stage B: clustering with reconstruction and label guidance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct DecConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub clusters: usize,
    /// Student-t degrees of freedom of the assignment kernel.
    pub t_dof: f64,
}

impl Default for DecConfig {
    fn default() -> Self {
        DecConfig {
            train: TrainConfig {
                epochs: 100,
                learning_rate: 1e-4,
                weight_decay: 0.0,
                ..TrainConfig::default()
            },
            alpha: 0.1,
            beta: 0.5,
            gamma: 0.0,
            clusters: 2,
            t_dof: 1.0,
        }
    }
}

impl DecConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self, section: &str) -> Vec<String> {
        let mut errs = self.train.validate(section);
        errs.extend(self.weights().validate(section));
        if self.clusters < 2 {
            errs.push(format!("{section}.clusters must be at least 2, got {}", self.clusters));
        }
        if !(self.t_dof.is_finite() && self.t_dof > 0.0) {
            errs.push(format!("{section}.t_dof must be > 0, got {}", self.t_dof));
        }
        errs
    }
}

/// Which labels the fine-tuning stage may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// Only the visible labels of the labeled pool.
    LabeledOnly,
    /// Every labeled instance of the corpus, masked or not.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct FinetuneConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub mode: FinetuneMode,
    /// Accept a source checkpoint that did not come out of clustering.
    pub allow_any_stage: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            train: TrainConfig::default(),
            mode: FinetuneMode::LabeledOnly,
            allow_any_stage: false,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self, section: &str) -> Vec<String> {
        self.train.validate(section)
    }
}

/// Missing keys of a stage section take that stage's own defaults. A plain
/// `serde(default)` would fill the flattened optimizer fields from
/// `TrainConfig::default()` instead.
macro_rules! stage_defaults {
    ($ty:ident, $raw:ident { $($field:ident: $fty:ty),* }) => {
        #[derive(Deserialize)]
        struct $raw {
            #[serde(flatten)]
            train: TrainConfig,
            $($field: $fty,)*
        }

        impl TryFrom<toml::Table> for $ty {
            type Error = toml::de::Error;

            fn try_from(user: toml::Table) -> Result<Self, Self::Error> {
                let mut table = toml::Table::try_from($ty::default()).expect("defaults serialize");
                table.extend(user);
                let raw: $raw = toml::Value::Table(table).try_into()?;
                Ok($ty {
                    train: raw.train,
                    $($field: raw.$field,)*
                })
            }
        }
    };
}

stage_defaults!(AutoencoderConfig, AutoencoderRaw { alpha: f64, gamma: f64 });
stage_defaults!(DecConfig, DecRaw { alpha: f64, beta: f64, gamma: f64, clusters: usize, t_dof: f64 });
stage_defaults!(FinetuneConfig, FinetuneRaw { mode: FinetuneMode, allow_any_stage: bool });
