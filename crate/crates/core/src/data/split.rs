use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sample::MultimodalSample;
use crate::error::{Error, Result};

/// Share of each pool held out for validation.
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

/// Labeled and unlabeled pools, each split into train and validation parts.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train_labeled: Vec<MultimodalSample>,
    pub val_labeled: Vec<MultimodalSample>,
    pub train_unlabeled: Vec<MultimodalSample>,
    pub val_unlabeled: Vec<MultimodalSample>,
    pub seed: u64,
    pub label_fraction: f64,
}

impl CorpusSplit {
    pub fn len(&self) -> usize {
        self.train_labeled.len()
            + self.val_labeled.len()
            + self.train_unlabeled.len()
            + self.val_unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Training portion of both pools (labeled first).
    pub fn train_all(&self) -> Vec<MultimodalSample> {
        self.train_labeled
            .iter()
            .chain(&self.train_unlabeled)
            .cloned()
            .collect()
    }

    pub fn val_all(&self) -> Vec<MultimodalSample> {
        self.val_labeled
            .iter()
            .chain(&self.val_unlabeled)
            .cloned()
            .collect()
    }

    pub fn pools_mut(&mut self) -> [&mut Vec<MultimodalSample>; 4] {
        [
            &mut self.train_labeled,
            &mut self.val_labeled,
            &mut self.train_unlabeled,
            &mut self.val_unlabeled,
        ]
    }
}

/// Keeps labels on a seeded uniform `label_fraction` of the corpus and hides
/// the rest, then splits both pools train/validation.
///
/// Samples whose raw label is missing or zero can only land in the unlabeled
/// pool. The labeled pool holds `round(label_fraction · N)` samples, capped by
/// how many carry a polar label.
pub fn mask_labels(
    samples: &[MultimodalSample],
    label_fraction: f64,
    seed: u64,
) -> Result<CorpusSplit> {
    mask_labels_with_val(samples, label_fraction, DEFAULT_VAL_FRACTION, seed)
}

pub fn mask_labels_with_val(
    samples: &[MultimodalSample],
    label_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<CorpusSplit> {
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(Error::config(format!(
            "data.label_fraction must be in (0, 1], got {label_fraction}"
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config(format!(
            "data.val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eligible = Vec::new();
    let mut ineligible = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.true_label().is_some() {
            eligible.push(i);
        } else {
            ineligible.push(i);
        }
    }
    eligible.shuffle(&mut rng);
    let n_labeled = ((label_fraction * samples.len() as f64).round() as usize).min(eligible.len());

    let mut labeled: Vec<MultimodalSample> = eligible[..n_labeled]
        .iter()
        .map(|&i| MultimodalSample {
            is_labeled: true,
            ..samples[i].clone()
        })
        .collect();
    let mut unlabeled_idx: Vec<usize> = eligible[n_labeled..].to_vec();
    unlabeled_idx.extend(ineligible);
    unlabeled_idx.sort_unstable();
    let mut unlabeled: Vec<MultimodalSample> = unlabeled_idx
        .iter()
        .map(|&i| MultimodalSample {
            is_labeled: false,
            ..samples[i].clone()
        })
        .collect();
    unlabeled.shuffle(&mut rng);
    labeled.shuffle(&mut rng);

    let (train_labeled, val_labeled) = split_train_val(labeled, val_fraction);
    let (train_unlabeled, val_unlabeled) = split_train_val(unlabeled, val_fraction);
    Ok(CorpusSplit {
        train_labeled,
        val_labeled,
        train_unlabeled,
        val_unlabeled,
        seed,
        label_fraction,
    })
}

fn split_train_val(
    mut pool: Vec<MultimodalSample>,
    val_fraction: f64,
) -> (Vec<MultimodalSample>, Vec<MultimodalSample>) {
    let n_train = ((1.0 - val_fraction) * pool.len() as f64).round() as usize;
    let val = pool.split_off(n_train);
    (pool, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn corpus(n: usize) -> Vec<MultimodalSample> {
        (0..n)
            .map(|i| {
                let x = Array2::from_elem((1, 1), i as f64);
                let label = if i % 2 == 0 { -1.5 } else { 2.0 };
                MultimodalSample::new(format!("s{i:05}"), x.clone(), x.clone(), x, Some(label))
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn full_fraction_leaves_unlabeled_empty() {
        let split = mask_labels(&corpus(50), 1.0, 3).unwrap();
        assert!(split.train_unlabeled.is_empty() && split.val_unlabeled.is_empty());
        assert_eq!(split.train_labeled.len() + split.val_labeled.len(), 50);
    }

    #[test]
    fn mosi_sized_forty_percent() {
        let split = mask_labels(&corpus(2183), 0.4, 11).unwrap();
        let labeled = split.train_labeled.len() + split.val_labeled.len();
        let unlabeled = split.train_unlabeled.len() + split.val_unlabeled.len();
        assert!((872..=874).contains(&labeled), "{labeled}");
        assert!((1309..=1311).contains(&unlabeled), "{unlabeled}");
        assert!(split.train_unlabeled.iter().all(|s| s.binary_label().is_none()));
        assert!(split.train_labeled.iter().all(|s| s.binary_label().is_some()));
    }

    #[test]
    fn same_seed_same_split() {
        let c = corpus(100);
        assert_eq!(mask_labels(&c, 0.4, 9).unwrap(), mask_labels(&c, 0.4, 9).unwrap());
        assert_ne!(mask_labels(&c, 0.4, 9).unwrap(), mask_labels(&c, 0.4, 10).unwrap());
    }

    #[test]
    fn zero_labels_stay_unlabeled() {
        let mut c = corpus(20);
        for s in c.iter_mut().take(5) {
            s.raw_label = Some(0.0);
        }
        let split = mask_labels(&c, 1.0, 1).unwrap();
        assert_eq!(split.train_unlabeled.len() + split.val_unlabeled.len(), 5);
    }

    #[test]
    fn rejects_fraction_out_of_range() {
        assert!(mask_labels(&corpus(5), 0.0, 1).is_err());
        assert!(mask_labels(&corpus(5), 1.2, 1).is_err());
    }

    proptest! {
        #[test]
        fn partitions_exactly(n in 1usize..300, frac in 0.01f64..=1.0, seed in any::<u64>()) {
            let c = corpus(n);
            let split = mask_labels(&c, frac, seed).unwrap();
            let mut ids = HashSet::new();
            for pool in [&split.train_labeled, &split.val_labeled, &split.train_unlabeled, &split.val_unlabeled] {
                for s in pool.iter() {
                    prop_assert!(ids.insert(s.sample_id.clone()));
                }
            }
            prop_assert_eq!(ids.len(), n);
            let labeled = split.train_labeled.len() + split.val_labeled.len();
            prop_assert!((labeled as f64 - frac * n as f64).abs() <= 1.0);
            let unlabeled = n - labeled;
            for (tr, total) in [(split.train_labeled.len(), labeled), (split.train_unlabeled.len(), unlabeled)] {
                prop_assert!((tr as f64 - 0.8 * total as f64).abs() <= 1.0);
            }
        }
    }
}
