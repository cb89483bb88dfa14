use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input channel of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Visual,
    Audio,
}

impl Modality {
    /// Fusion order. Every per-modality loop in the crate follows it.
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Visual, Modality::Audio];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Visual => "visual",
            Modality::Audio => "audio",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Modality::Text => 0,
            Modality::Visual => 1,
            Modality::Audio => 2,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 2] = [Sentiment::Negative, Sentiment::Positive];

    /// 0 for negative, 1 for positive; also the BCE target.
    pub fn index(self) -> usize {
        match self {
            Sentiment::Negative => 0,
            Sentiment::Positive => 1,
        }
    }

    pub fn from_index(i: usize) -> Sentiment {
        if i == 0 {
            Sentiment::Negative
        } else {
            Sentiment::Positive
        }
    }

    pub fn target(self) -> f64 {
        self.index() as f64
    }
}

/// Maps a signed sentiment intensity to a binary class.
///
/// Zero carries no polarity and yields `None`; such samples never enter the
/// labeled pool.
pub fn binarize_label(raw: f64) -> Result<Option<Sentiment>> {
    if !raw.is_finite() {
        return Err(Error::Data(format!("non-finite sentiment label {raw}")));
    }
    Ok(if raw < 0.0 {
        Some(Sentiment::Negative)
    } else if raw > 0.0 {
        Some(Sentiment::Positive)
    } else {
        None
    })
}

/// One utterance with aligned text, visual and audio feature sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub sample_id: String,
    /// `[T × D]` per modality, in [`Modality::ALL`] order.
    pub features: [Array2<f64>; 3],
    /// Number of leading time steps carrying data; the rest is padding.
    pub valid_len: usize,
    pub raw_label: Option<f64>,
    pub is_labeled: bool,
    pub normalized: bool,
}

impl MultimodalSample {
    /// Builds an unpadded sample. All modalities must share one sequence length.
    pub fn new(
        sample_id: impl Into<String>,
        text: Array2<f64>,
        visual: Array2<f64>,
        audio: Array2<f64>,
        raw_label: Option<f64>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        let features = [text, visual, audio];
        for m in Modality::ALL {
            if features[m.index()].nrows() == 0 {
                return Err(Error::InvalidSample {
                    sample_id,
                    reason: format!("empty {m} sequence"),
                });
            }
        }
        let len = features[0].nrows();
        if features.iter().any(|f| f.nrows() != len) {
            return Err(Error::InvalidSample {
                sample_id,
                reason: format!(
                    "sequence lengths differ across modalities: {:?}",
                    features.iter().map(|f| f.nrows()).collect::<Vec<_>>()
                ),
            });
        }
        if let Some(raw) = raw_label {
            binarize_label(raw)?;
        }
        Ok(MultimodalSample {
            sample_id,
            features,
            valid_len: len,
            is_labeled: raw_label.is_some(),
            raw_label,
            normalized: false,
        })
    }

    pub fn modality(&self, m: Modality) -> &Array2<f64> {
        &self.features[m.index()]
    }

    pub fn seq_len(&self) -> usize {
        self.features[0].nrows()
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.features[0].ncols(),
            self.features[1].ncols(),
            self.features[2].ncols(),
        ]
    }

    /// Training label. Absent for masked samples, whatever the raw label says.
    pub fn binary_label(&self) -> Option<Sentiment> {
        if !self.is_labeled {
            return None;
        }
        self.true_label()
    }

    /// Label derived from the raw intensity, ignoring masking. Only evaluation
    /// against ground truth and the full-dataset fine-tuning mode read this.
    pub fn true_label(&self) -> Option<Sentiment> {
        self.raw_label.and_then(|r| binarize_label(r).ok().flatten())
    }

    /// Concatenation of the three flattened modality matrices.
    pub fn flat_input(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.features.iter().map(|f| f.len()).sum());
        for f in &self.features {
            out.extend(f.iter().copied());
        }
        out
    }
}
