use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StageTag;

/// Metrics of one completed epoch. Optional fields only exist for stages
/// where they are defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disentangle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervised: Option<f64>,
    /// Cluster purity of the training set against the true labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
}

impl EpochRecord {
    pub fn new(epoch: usize, train_loss: f64, val_loss: f64) -> Self {
        EpochRecord {
            epoch,
            train_loss,
            val_loss,
            train_accuracy: None,
            val_accuracy: None,
            val_f1: None,
            recon: None,
            disentangle: None,
            cluster: None,
            supervised: None,
            purity: None,
            grad_norm: None,
        }
    }
}

/// Per-epoch history of one stage plus reproducibility metadata.
///
/// Equality ignores the wall-clock time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: StageTag,
    pub epochs: Vec<EpochRecord>,
    /// SHA-256 of the canonical configuration text.
    pub config_hash: String,
    pub provenance: String,
    /// Selected epoch for stages that select; the last epoch otherwise.
    pub selected_epoch: Option<usize>,
    /// Not part of the metrics log, so logs stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.stage == other.stage
            && self.epochs == other.epochs
            && self.config_hash == other.config_hash
            && self.provenance == other.provenance
            && self.selected_epoch == other.selected_epoch
    }
}

impl RunRecord {
    pub fn new(stage: StageTag, config_hash: impl Into<String>) -> Self {
        RunRecord {
            stage,
            epochs: Vec::new(),
            config_hash: config_hash.into(),
            provenance: provenance(),
            selected_epoch: None,
            wall_clock_secs: 0.0,
        }
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn selected(&self) -> Option<&EpochRecord> {
        self.selected_epoch
            .and_then(|e| self.epochs.iter().find(|r| r.epoch == e))
    }
}

/// Package name, version and checkpoint format of this build.
pub fn provenance() -> String {
    format!(
        "{} {} (checkpoint v{})",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        crate::model::CHECKPOINT_VERSION
    )
}

/// Model-selection rule over per-epoch records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Highest validation accuracy, then lowest validation loss, then earliest.
    #[default]
    AccuracyThenLoss,
    /// The final epoch.
    Last,
}

/// Epoch number (1-based) chosen by `rule`.
pub fn select_best(records: &[EpochRecord], rule: SelectionRule) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::State("cannot select from an empty run record".into()))?;
    Ok(match rule {
        SelectionRule::Last => records.last().expect("non-empty").epoch,
        SelectionRule::AccuracyThenLoss => {
            let mut best = first;
            for r in &records[1..] {
                if better(r, best) {
                    best = r;
                }
            }
            best.epoch
        }
    })
}

/// Strictly better under the accuracy-then-loss rule; equal candidates keep
/// the earlier epoch.
pub fn better(candidate: &EpochRecord, incumbent: &EpochRecord) -> bool {
    let acc = |r: &EpochRecord| r.val_accuracy.unwrap_or(f64::NEG_INFINITY);
    let (a, b) = (acc(candidate), acc(incumbent));
    if a != b {
        return a > b;
    }
    candidate.val_loss < incumbent.val_loss
}
