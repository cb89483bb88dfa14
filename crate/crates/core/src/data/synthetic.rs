//! Seeded two-class corpus generator with the same shape as the real dataset.
//!
//! Each modality gets a random unit direction `u`. A sample of class `s = ±1`
//! with intensity `a ~ U(0.5, 1.5)` has per-step features
//! `s · a · (distance / 2) · u + sample_noise · η + noise · ε_t`, where `η` is
//! drawn once per sample and `ε_t` once per time step. The raw label is
//! `s · (1 + a)` so its sign encodes the class.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sample::{Modality, MultimodalSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub samples: usize,
    pub classes: usize,
    pub seed: u64,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    pub text_dim: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// Distance between the two class means of the per-step features, per modality.
    pub signal_distance: f64,
    /// Per-time-step isotropic noise level.
    pub noise: f64,
    /// Per-sample noise shared by all time steps of one sample.
    pub sample_noise: f64,
    pub positive_fraction: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            samples: 2183,
            classes: 2,
            seed: 17,
            seq_len_min: 10,
            seq_len_max: 40,
            text_dim: 300,
            visual_dim: 47,
            audio_dim: 74,
            signal_distance: 1.0,
            noise: 1.0,
            sample_noise: 0.5,
            positive_fraction: 0.5,
        }
    }
}

impl GeneratorSpec {
    pub fn dims(&self) -> [usize; 3] {
        [self.text_dim, self.visual_dim, self.audio_dim]
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.samples == 0 {
            errs.push("synthetic.samples must be positive".into());
        }
        if self.classes != 2 {
            errs.push(format!("synthetic.classes must be 2, got {}", self.classes));
        }
        if self.seq_len_min == 0 || self.seq_len_max < self.seq_len_min {
            errs.push(format!(
                "synthetic.seq_len_min/seq_len_max must satisfy 1 <= min <= max, got {}..{}",
                self.seq_len_min, self.seq_len_max
            ));
        }
        for (name, d) in [
            ("text_dim", self.text_dim),
            ("visual_dim", self.visual_dim),
            ("audio_dim", self.audio_dim),
        ] {
            if d == 0 {
                errs.push(format!("synthetic.{name} must be positive"));
            }
        }
        for (name, v) in [
            ("signal_distance", self.signal_distance),
            ("noise", self.noise),
            ("sample_noise", self.sample_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("synthetic.{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            errs.push(format!(
                "synthetic.positive_fraction must be in (0, 1), got {}",
                self.positive_fraction
            ));
        }
        errs
    }

    /// Unit signal direction of each modality, derived from the seed alone.
    pub fn directions(&self) -> [Array1<f64>; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5EED_D1EC);
        self.dims().map(|d| {
            let v: Array1<f64> = Array1::from_shape_fn(d, |_| StandardNormal.sample(&mut rng));
            let norm = v.dot(&v).sqrt();
            v / norm
        })
    }
}

/// Generates `spec.samples` unpadded samples with ids `syn-00000`, `syn-00001`, ...
pub fn generate_synthetic_corpus(spec: &GeneratorSpec) -> Result<Vec<MultimodalSample>> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let dirs = spec.directions();
    let dims = spec.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let sign = if rng.random_bool(spec.positive_fraction) { 1.0 } else { -1.0 };
        let intensity: f64 = rng.random_range(0.5..1.5);
        let len = rng.random_range(spec.seq_len_min..=spec.seq_len_max);
        let features = Modality::ALL.map(|m| {
            let k = m.index();
            let center = &dirs[k] * (sign * intensity * spec.signal_distance / 2.0);
            let offset: Array1<f64> = Array1::from_shape_fn(dims[k], |_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                spec.sample_noise * e
            });
            let base = center + offset;
            Array2::from_shape_fn((len, dims[k]), |(_, j)| {
                let e: f64 = StandardNormal.sample(&mut rng);
                base[j] + spec.noise * e
            })
        });
        let [text, visual, audio] = features;
        out.push(MultimodalSample::new(
            format!("syn-{i:05}"),
            text,
            visual,
            audio,
            Some(sign * (1.0 + intensity)),
        )?);
    }
    Ok(out)
}
