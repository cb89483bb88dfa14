use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use super::sample::{Modality, MultimodalSample};
use crate::error::{Error, Result};

/// Pads with zero rows or truncates (keeping the prefix) every modality to
/// `target_len` steps.
pub fn pad_or_truncate(sample: &MultimodalSample, target_len: usize) -> Result<MultimodalSample> {
    if target_len == 0 {
        return Err(Error::config("target sequence length must be positive"));
    }
    for m in Modality::ALL {
        if sample.modality(m).nrows() == 0 || sample.valid_len == 0 {
            return Err(Error::InvalidSample {
                sample_id: sample.sample_id.clone(),
                reason: format!("empty {m} sequence"),
            });
        }
    }
    let features = Modality::ALL.map(|m| {
        let src = sample.modality(m);
        let mut out = Array2::zeros((target_len, src.ncols()));
        let keep = src.nrows().min(target_len);
        out.slice_mut(s![..keep, ..]).assign(&src.slice(s![..keep, ..]));
        out
    });
    Ok(MultimodalSample {
        features,
        valid_len: sample.valid_len.min(target_len),
        ..sample.clone()
    })
}

/// Per-feature statistics for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Mean and standard deviation of the min-max scaled training values.
    fn scaled_moments(&self, j: usize) -> (f64, f64) {
        let range = self.max[j] - self.min[j];
        ((self.mean[j] - self.min[j]) / range, self.std[j] / range)
    }
}

/// Training-portion statistics for every modality, in [`Modality::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub modalities: [FeatureStats; 3],
}

impl NormalizationStats {
    pub fn modality(&self, m: Modality) -> &FeatureStats {
        &self.modalities[m.index()]
    }
}

/// Fits statistics over all non-padding time steps of `train`.
pub fn fit_normalization(train: &[MultimodalSample]) -> Result<NormalizationStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::Data("cannot fit normalization on an empty training set".into()))?;
    let dims = first.dims();
    for s in train {
        if s.dims() != dims {
            return Err(Error::Schema(format!(
                "sample {} has feature dims {:?}, expected {:?}",
                s.sample_id,
                s.dims(),
                dims
            )));
        }
        if s.normalized {
            return Err(Error::State(format!(
                "sample {} is already normalized",
                s.sample_id
            )));
        }
    }
    let modalities = Modality::ALL.map(|m| fit_modality(train, m, dims[m.index()]));
    Ok(NormalizationStats { modalities })
}

fn fit_modality(train: &[MultimodalSample], m: Modality, dim: usize) -> FeatureStats {
    let mut min = Array1::from_elem(dim, f64::INFINITY);
    let mut max = Array1::from_elem(dim, f64::NEG_INFINITY);
    let mut sum = Array1::<f64>::zeros(dim);
    let mut count = 0usize;
    for s in train {
        let valid = s.modality(m).slice(s![..s.valid_len, ..]);
        for row in valid.rows() {
            for j in 0..dim {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
            sum += &row;
            count += 1;
        }
    }
    let mean = sum / count as f64;
    // Second pass for the variance keeps it non-negative and accurate.
    let mut sq = Array1::<f64>::zeros(dim);
    for s in train {
        for row in s.modality(m).slice(s![..s.valid_len, ..]).rows() {
            let d = &row - &mean;
            sq += &(&d * &d);
        }
    }
    let std = (sq / count as f64).mapv(f64::sqrt);
    let constant = (0..dim)
        .map(|j| std[j] == 0.0 || max[j] <= min[j])
        .collect();
    FeatureStats {
        min: min.to_vec(),
        max: max.to_vec(),
        mean: mean.to_vec(),
        std: std.to_vec(),
        constant,
    }
}

/// Min-max scales each feature to the training range, then z-scores it with
/// the moments of the scaled training values. Constant features become 0 and
/// padding rows stay zero.
pub fn apply_normalization(
    sample: &MultimodalSample,
    stats: &NormalizationStats,
) -> Result<MultimodalSample> {
    if sample.normalized {
        return Err(Error::State(format!(
            "sample {} is already normalized",
            sample.sample_id
        )));
    }
    let mut out = sample.clone();
    for m in Modality::ALL {
        let fs = stats.modality(m);
        let x = &mut out.features[m.index()];
        if x.ncols() != fs.dim() {
            return Err(Error::Shape(format!(
                "sample {} {m} has {} features, statistics have {}",
                sample.sample_id,
                x.ncols(),
                fs.dim()
            )));
        }
        for (t, mut row) in x.rows_mut().into_iter().enumerate() {
            if t >= sample.valid_len {
                row.fill(0.0);
                continue;
            }
            for j in 0..fs.dim() {
                row[j] = if fs.constant[j] {
                    0.0
                } else {
                    let scaled = (row[j] - fs.min[j]) / (fs.max[j] - fs.min[j]);
                    let (mu, sigma) = fs.scaled_moments(j);
                    (scaled - mu) / sigma
                };
            }
        }
    }
    out.normalized = true;
    Ok(out)
}
