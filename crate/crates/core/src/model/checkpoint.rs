//! Checkpoint archive: a TOML header, a separator line, then every tensor as
//! little-endian `f64` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::EncoderStackConfig;
use super::stack::{EncoderStack, StageTag};
use crate::data::Sentiment;
use crate::dec::ClusterState;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Params};

pub const CHECKPOINT_FORMAT: &str = "semidec-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const SEPARATOR: &[u8] = b"\n---END-HEADER---\n";

/// Everything needed to rebuild a model, and optionally to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stack: EncoderStack,
    pub cluster: Option<ClusterState>,
    pub optimizer: Option<AdamState>,
    /// Completed epochs of the stage that wrote the checkpoint.
    pub epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    stage: StageTag,
    created_unix: i64,
    epoch: usize,
    model: EncoderStackConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    cluster: Option<ClusterHeader>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer_step: Option<i64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterHeader {
    k: usize,
    t_dof: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cluster_to_class: Option<Vec<Sentiment>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

const PARAM: &str = "param/";
const BUFFER: &str = "buffer/";
const CLUSTER: &str = "cluster/centroids";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

impl Checkpoint {
    pub fn new(stack: EncoderStack) -> Self {
        Checkpoint {
            stack,
            cluster: None,
            optimizer: None,
            epoch: 0,
        }
    }

    pub fn stage(&self) -> StageTag {
        self.stack.stage
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload: Vec<f64> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, data: &[f64]| {
            tensors.push(TensorEntry { name, shape });
            payload.extend_from_slice(data);
        };
        self.stack.visit("", &mut |name, shape, data| {
            push(format!("{PARAM}{name}"), shape.to_vec(), data)
        });
        for (name, data) in self.stack.head.buffers() {
            push(format!("{BUFFER}head.{name}"), vec![data.len()], &data);
        }
        if let Some(c) = &self.cluster {
            push(
                CLUSTER.to_string(),
                c.centroids.shape().to_vec(),
                c.centroids.as_slice().expect("contiguous centroids"),
            );
        }
        if let Some(opt) = &self.optimizer {
            for (name, m) in &opt.moments {
                push(format!("{ADAM_M}{name}"), vec![m.m.len()], &m.m);
                push(format!("{ADAM_V}{name}"), vec![m.v.len()], &m.v);
            }
        }
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0);
        let header = Header {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            stage: self.stack.stage,
            created_unix,
            epoch: self.epoch,
            model: self.stack.config.clone(),
            cluster: self.cluster.as_ref().map(|c| ClusterHeader {
                k: c.k(),
                t_dof: c.t_dof,
                cluster_to_class: c.cluster_to_class.clone(),
            }),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step as i64),
            tensors,
        };
        let text = toml::to_string(&header)
            .map_err(|e| Error::Checkpoint(format!("cannot encode header: {e}")))?;
        let mut out = Vec::with_capacity(text.len() + SEPARATOR.len() + 8 * payload.len());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(SEPARATOR);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .windows(SEPARATOR.len())
            .position(|w| w == SEPARATOR)
            .ok_or_else(|| Error::Checkpoint("missing header separator".into()))?;
        let text = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let header: Header =
            toml::from_str(text).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        let body = &bytes[split + SEPARATOR.len()..];
        if !body.len().is_multiple_of(8) {
            return Err(Error::Checkpoint("truncated tensor payload".into()));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        let mut offset = 0;
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            if offset + n > values.len() {
                return Err(Error::Checkpoint(format!("payload too short for {}", t.name)));
            }
            tensors.insert(t.name, (t.shape, values[offset..offset + n].to_vec()));
            offset += n;
        }
        if offset != values.len() {
            return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
        }

        let mut stack = EncoderStack::new(header.model, 0)?;
        stack.stage = header.stage;
        let mut missing = None;
        stack.visit_mut("", &mut |name, shape, data| {
            match tensors.remove(&format!("{PARAM}{name}")) {
                Some((s, v)) if s == shape => data.copy_from_slice(&v),
                _ => {
                    missing.get_or_insert_with(|| name.to_string());
                }
            }
        });
        if let Some(name) = missing {
            return Err(Error::Checkpoint(format!(
                "parameter {name} is missing or has the wrong shape"
            )));
        }
        let mut buffer = |name: &str| {
            tensors
                .remove(&format!("{BUFFER}head.{name}"))
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Checkpoint(format!("buffer {name} is missing")))
        };
        let bn = &mut stack.head.bn;
        let mean = buffer("bn.running_mean")?;
        let var = buffer("bn.running_var")?;
        let seen = buffer("bn.batches_seen")?;
        if mean.len() != bn.running_mean.len() || var.len() != bn.running_var.len() || seen.len() != 1 {
            return Err(Error::Checkpoint("batch-norm buffers have the wrong size".into()));
        }
        bn.running_mean = Array1::from(mean);
        bn.running_var = Array1::from(var);
        bn.batches_seen = seen[0] as u64;

        let cluster = match header.cluster {
            None => None,
            Some(ch) => {
                let (shape, data) = tensors
                    .remove(CLUSTER)
                    .ok_or_else(|| Error::Checkpoint("cluster centroids are missing".into()))?;
                if shape.len() != 2 || shape[0] != ch.k {
                    return Err(Error::Checkpoint(format!("centroid shape {shape:?} for k = {}", ch.k)));
                }
                let centroids = Array2::from_shape_vec((shape[0], shape[1]), data)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                let mut state = ClusterState::new(centroids, ch.t_dof)?;
                state.cluster_to_class = ch.cluster_to_class;
                state.validate()?;
                Some(state)
            }
        };

        let optimizer = header.optimizer_step.map(|step| {
            let mut state = AdamState {
                step: step as u64,
                ..AdamState::default()
            };
            let names: Vec<String> = tensors
                .keys()
                .filter_map(|k| k.strip_prefix(ADAM_M).map(str::to_string))
                .collect();
            for name in names {
                let m = tensors.remove(&format!("{ADAM_M}{name}")).map(|t| t.1).unwrap_or_default();
                let v = tensors.remove(&format!("{ADAM_V}{name}")).map(|t| t.1).unwrap_or_default();
                state.moments.insert(name, crate::nn::Moments { m, v });
            }
            state
        });
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Checkpoint {
            stack,
            cluster,
            optimizer,
            epoch: header.epoch,
        })
    }

    /// Writes atomically through a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                reason: "checkpoint not found".into(),
            },
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;
    use crate::nn::{Adam, AdamConfig};
    use ndarray::array;

    fn config() -> EncoderStackConfig {
        let arch = ArchConfig {
            d_model: 8,
            heads: 2,
            layers: 1,
            ff_dim: 16,
            latent_dim: 2,
            head_widths: vec![6],
            decoder_widths: vec![],
            ..ArchConfig::default()
        };
        EncoderStackConfig::new([3, 2, 2], 4, arch)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut stack = EncoderStack::new(config(), 5).unwrap();
        stack.stage = StageTag::Dec;
        stack.head.bn.running_mean.fill(0.1 + 1e-17);
        stack.head.bn.batches_seen = 7;
        stack.latent.weight[[0, 0]] = f64::MIN_POSITIVE;
        let mut cluster = ClusterState::new(array![[0.1, -0.2], [1.0 / 3.0, 2.0]], 1.0).unwrap();
        cluster.cluster_to_class = Some(vec![Sentiment::Positive, Sentiment::Negative]);
        let mut adam = Adam::new(AdamConfig::default());
        let grad = stack.zeros_like();
        let mut moved = stack.clone();
        adam.step(&mut moved, &grad, &|n| n.starts_with("encoder."), 0.0);
        let ck = Checkpoint {
            stack,
            cluster: Some(cluster),
            optimizer: Some(adam.state),
            epoch: 3,
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let bits = |c: &Checkpoint| c.stack.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ck));
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ck = Checkpoint::new(EncoderStack::new(config(), 1).unwrap());
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        let err = Checkpoint::load(&dir.path().join("none.ckpt")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }));
        assert_eq!(err.exit_code(), 5);
    }

    #[test]
    fn corrupt_payload_is_rejected() {
        let ck = Checkpoint::new(EncoderStack::new(config(), 1).unwrap());
        let mut bytes = ck.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"nothing here").is_err());
    }
}
