//! On-disk corpus container.
//!
//! A corpus is a directory holding
//!
//! * `text.npy`, `visual.npy`, `audio.npy`: `[N × T × D]` arrays (NumPy
//!   format, f64 or f32), zero padded past each sample's length;
//! * `labels.npy`: `[N]` signed sentiment intensities, `NaN` for "no label";
//! * `manifest.toml`: sample ids, dims, target length, lengths, labeled flags
//!   and the normalization flag.
//!
//! Only `dims` is mandatory in a manifest handed to [`ingest_mosi`]; the other
//! keys fall back to `mosi-{index}` ids, full-length sequences and all labels
//! visible.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3};
use ndarray_npy::{read_npy, write_npy, ReadNpyError};
use serde::{Deserialize, Serialize};

use super::preprocess::pad_or_truncate;
use super::sample::{binarize_label, Modality, MultimodalSample};
use crate::error::{Error, Result};

pub const CORPUS_FORMAT: &str = "semidec-corpus";
pub const CORPUS_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const LABELS_FILE: &str = "labels.npy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityDims {
    pub text: usize,
    pub visual: usize,
    pub audio: usize,
}

impl ModalityDims {
    pub fn as_array(&self) -> [usize; 3] {
        [self.text, self.visual, self.audio]
    }
}

impl From<[usize; 3]> for ModalityDims {
    fn from(d: [usize; 3]) -> Self {
        ModalityDims {
            text: d[0],
            visual: d[1],
            audio: d[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default = "default_version")]
    pub version: u32,
    pub dims: ModalityDims,
    #[serde(default)]
    pub target_len: Option<usize>,
    #[serde(default)]
    pub normalized: bool,
    #[serde(default)]
    pub sample_ids: Option<Vec<String>>,
    #[serde(default)]
    pub lengths: Option<Vec<usize>>,
    #[serde(default)]
    pub labeled: Option<Vec<bool>>,
}

fn default_format() -> String {
    CORPUS_FORMAT.to_string()
}

fn default_version() -> u32 {
    CORPUS_VERSION
}

/// Expected layout of an external feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemaConfig {
    pub text_dim: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub target_len: usize,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            text_dim: 300,
            visual_dim: 47,
            audio_dim: 74,
            target_len: 30,
        }
    }
}

fn array_file(m: Modality) -> String {
    format!("{}.npy", m.name())
}

/// Writes `samples` (all of one sequence length) as a corpus container.
pub fn write_corpus(dir: &Path, samples: &[MultimodalSample]) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("refusing to write an empty corpus".into()))?;
    let len = first.seq_len();
    let dims = first.dims();
    for s in samples {
        if s.seq_len() != len || s.dims() != dims {
            return Err(Error::Data(format!(
                "sample {} has shape ({}, {:?}), corpus shape is ({len}, {dims:?}); pad first",
                s.sample_id,
                s.seq_len(),
                s.dims()
            )));
        }
    }
    let normalized = first.normalized;
    if samples.iter().any(|s| s.normalized != normalized) {
        return Err(Error::State("mixed normalized and raw samples".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for m in Modality::ALL {
        let d = dims[m.index()];
        let mut arr = Array3::<f64>::zeros((samples.len(), len, d));
        for (i, s) in samples.iter().enumerate() {
            arr.slice_mut(s![i, .., ..]).assign(s.modality(m));
        }
        let path = dir.join(array_file(m));
        write_npy(&path, &arr).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    let labels: Array1<f64> = samples
        .iter()
        .map(|s| s.raw_label.unwrap_or(f64::NAN))
        .collect();
    let path = dir.join(LABELS_FILE);
    write_npy(&path, &labels).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;

    let manifest = Manifest {
        format: CORPUS_FORMAT.into(),
        version: CORPUS_VERSION,
        dims: dims.into(),
        target_len: Some(len),
        normalized,
        sample_ids: Some(samples.iter().map(|s| s.sample_id.clone()).collect()),
        lengths: Some(samples.iter().map(|s| s.valid_len).collect()),
        labeled: Some(samples.iter().map(|s| s.is_labeled).collect()),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Reads a corpus container exactly as written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<Vec<MultimodalSample>> {
    let (manifest, arrays, labels) = load_container(dir)?;
    assemble(&manifest, arrays, labels)
}

/// Loads a CMU-MOSI style feature set, validates it against `schema` and
/// pads/truncates every sample to `schema.target_len`.
pub fn ingest_mosi(dir: &Path, schema: &SchemaConfig) -> Result<Vec<MultimodalSample>> {
    let (manifest, arrays, labels) = load_container(dir)?;
    let expected = [schema.text_dim, schema.visual_dim, schema.audio_dim];
    for m in Modality::ALL {
        let got = arrays[m.index()].dim().2;
        if got != expected[m.index()] {
            return Err(Error::Ingestion {
                sample_id: "*".into(),
                reason: format!("{m} feature dim is {got}, schema expects {}", expected[m.index()]),
            });
        }
    }
    let samples = assemble(&manifest, arrays, labels)?;
    samples
        .iter()
        .map(|s| {
            if s.normalized {
                return Err(Error::Ingestion {
                    sample_id: s.sample_id.clone(),
                    reason: "input is already normalized".into(),
                });
            }
            pad_or_truncate(s, schema.target_len)
        })
        .collect()
}

fn read_f64_array3(path: &Path) -> std::result::Result<Array3<f64>, ReadNpyError> {
    match read_npy::<_, Array3<f64>>(path) {
        Ok(a) => Ok(a),
        Err(ReadNpyError::WrongDescriptor(_)) => {
            read_npy::<_, Array3<f32>>(path).map(|a| a.mapv(f64::from))
        }
        Err(e) => Err(e),
    }
}

fn read_f64_array1(path: &Path) -> std::result::Result<Array1<f64>, ReadNpyError> {
    match read_npy::<_, Array1<f64>>(path) {
        Ok(a) => Ok(a),
        Err(ReadNpyError::WrongDescriptor(_)) => {
            read_npy::<_, Array1<f32>>(path).map(|a| a.mapv(f64::from))
        }
        Err(e) => Err(e),
    }
}

type Loaded = (Manifest, [Array3<f64>; 3], Array1<f64>);

fn load_container(dir: &Path) -> Result<Loaded> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::Ingestion {
        sample_id: "*".into(),
        reason: format!("cannot read {}: {e}", manifest_path.display()),
    })?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Ingestion {
        sample_id: "*".into(),
        reason: format!("bad manifest {}: {e}", manifest_path.display()),
    })?;
    if manifest.format != CORPUS_FORMAT || manifest.version != CORPUS_VERSION {
        return Err(Error::Ingestion {
            sample_id: "*".into(),
            reason: format!(
                "unsupported container {} v{}",
                manifest.format, manifest.version
            ),
        });
    }
    let mut arrays = Vec::with_capacity(3);
    for m in Modality::ALL {
        let path = dir.join(array_file(m));
        if !path.exists() {
            return Err(Error::Ingestion {
                sample_id: "*".into(),
                reason: format!("missing {m} modality file {}", path.display()),
            });
        }
        let arr = read_f64_array3(&path).map_err(|e| Error::Ingestion {
            sample_id: "*".into(),
            reason: format!("{m} array {}: {e}", path.display()),
        })?;
        arrays.push(arr);
    }
    let labels_path = dir.join(LABELS_FILE);
    let labels = read_f64_array1(&labels_path).map_err(|e| Error::Ingestion {
        sample_id: "*".into(),
        reason: format!("labels {}: {e}", labels_path.display()),
    })?;
    let arrays: [Array3<f64>; 3] = arrays.try_into().expect("three modalities");
    Ok((manifest, arrays, labels))
}

fn assemble(
    manifest: &Manifest,
    arrays: [Array3<f64>; 3],
    labels: Array1<f64>,
) -> Result<Vec<MultimodalSample>> {
    let n = arrays[0].dim().0;
    let t = arrays[0].dim().1;
    let dims = manifest.dims.as_array();
    for m in Modality::ALL {
        let (an, at, ad) = arrays[m.index()].dim();
        if an != n || at != t {
            return Err(Error::Ingestion {
                sample_id: "*".into(),
                reason: format!("{m} array has shape ({an}, {at}, {ad}), text has ({n}, {t}, _)"),
            });
        }
        if ad != dims[m.index()] {
            return Err(Error::Ingestion {
                sample_id: "*".into(),
                reason: format!("{m} feature dim {ad} disagrees with manifest {}", dims[m.index()]),
            });
        }
    }
    if labels.len() != n {
        return Err(Error::Ingestion {
            sample_id: "*".into(),
            reason: format!("{} labels for {n} samples", labels.len()),
        });
    }
    let check_len = |what: &str, len: usize| {
        if len != n {
            Err(Error::Ingestion {
                sample_id: "*".into(),
                reason: format!("manifest {what} has {len} entries for {n} samples"),
            })
        } else {
            Ok(())
        }
    };
    let ids: Vec<String> = match &manifest.sample_ids {
        Some(ids) => {
            check_len("sample_ids", ids.len())?;
            ids.clone()
        }
        None => (0..n).map(|i| format!("mosi-{i:05}")).collect(),
    };
    if let Some(l) = &manifest.lengths {
        check_len("lengths", l.len())?;
    }
    if let Some(l) = &manifest.labeled {
        check_len("labeled", l.len())?;
    }
    if let Some(target) = manifest.target_len {
        if target != t {
            return Err(Error::Ingestion {
                sample_id: "*".into(),
                reason: format!("manifest target_len {target} but arrays have {t} steps"),
            });
        }
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let id = &ids[i];
        let valid_len = manifest.lengths.as_ref().map_or(t, |l| l[i]);
        if valid_len == 0 || valid_len > t {
            return Err(Error::Ingestion {
                sample_id: id.clone(),
                reason: format!("length {valid_len} outside 1..={t}"),
            });
        }
        let raw = labels[i];
        let raw_label = if raw.is_nan() {
            None
        } else {
            binarize_label(raw).map_err(|e| Error::Ingestion {
                sample_id: id.clone(),
                reason: e.to_string(),
            })?;
            Some(raw)
        };
        let features: [Array2<f64>; 3] =
            Modality::ALL.map(|m| arrays[m.index()].slice(s![i, .., ..]).to_owned());
        out.push(MultimodalSample {
            sample_id: id.clone(),
            features,
            valid_len,
            raw_label,
            is_labeled: manifest.labeled.as_ref().map_or(raw_label.is_some(), |l| l[i]),
            normalized: manifest.normalized,
        });
    }
    Ok(out)
}
