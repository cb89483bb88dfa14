//! Sample model, corpus I/O, synthetic generation and preprocessing.

mod container;
mod preprocess;
mod sample;
mod split;
mod synthetic;

pub use container::{
    ingest_mosi, read_corpus, write_corpus, Manifest, ModalityDims, SchemaConfig, CORPUS_FORMAT,
    CORPUS_VERSION,
};
pub use preprocess::{
    apply_normalization, fit_normalization, pad_or_truncate, FeatureStats, NormalizationStats,
};
pub use sample::{binarize_label, Modality, MultimodalSample, Sentiment};
pub use split::{mask_labels, mask_labels_with_val, CorpusSplit, DEFAULT_VAL_FRACTION};
pub use synthetic::{generate_synthetic_corpus, GeneratorSpec};

use crate::error::Result;

/// Masks labels, splits, and normalizes every pool with statistics fitted on
/// the training portion of both pools. Samples must already share one length.
pub fn prepare_split(
    samples: &[MultimodalSample],
    label_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<(CorpusSplit, NormalizationStats)> {
    let mut split = mask_labels_with_val(samples, label_fraction, val_fraction, seed)?;
    let stats = fit_normalization(&split.train_all())?;
    for pool in split.pools_mut() {
        for s in pool.iter_mut() {
            *s = apply_normalization(s, &stats)?;
        }
    }
    Ok((split, stats))
}

/// Pads or truncates every sample to `target_len`.
pub fn pad_all(samples: &[MultimodalSample], target_len: usize) -> Result<Vec<MultimodalSample>> {
    samples.iter().map(|s| pad_or_truncate(s, target_len)).collect()
}
