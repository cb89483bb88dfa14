use std::fmt;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::EncoderStackConfig;
use super::encoder::{ModalityCache, ModalityEncoder};
use super::head::{ClassifierHead, HeadCache};
use crate::data::{Modality, MultimodalSample};
use crate::error::{Error, Result};
use crate::nn::{join, Linear, Mlp, MlpCache, Mode, Params};

/// Which training stage last produced a set of parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageTag {
    Initialized,
    Baseline,
    Autoencoder,
    Dec,
    Finetuned,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::Initialized => "initialized",
            StageTag::Baseline => "baseline",
            StageTag::Autoencoder => "autoencoder",
            StageTag::Dec => "dec",
            StageTag::Finetuned => "finetuned",
        }
    }

    pub fn parse(s: &str) -> Option<StageTag> {
        [
            StageTag::Initialized,
            StageTag::Baseline,
            StageTag::Autoencoder,
            StageTag::Dec,
            StageTag::Finetuned,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Named parameter groups. Transfer and optimizer filters address these.
pub const ENCODER_GROUPS: [&str; 3] = ["encoder.text", "encoder.visual", "encoder.audio"];
pub const LATENT_GROUP: &str = "latent";
pub const HEAD_GROUP: &str = "head";
pub const DECODER_GROUPS: [&str; 3] = ["decoder.text", "decoder.visual", "decoder.audio"];

/// Group of a fully qualified parameter name.
pub fn param_group(name: &str) -> &str {
    let mut parts = name.splitn(3, '.');
    let first = parts.next().unwrap_or("");
    match (first, parts.next()) {
        ("encoder" | "decoder", Some(second)) => &name[..first.len() + 1 + second.len()],
        _ => first,
    }
}

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("encoder.")
}

/// Parameters of the classification network: encoders and head.
pub fn is_classifier_param(name: &str) -> bool {
    is_encoder_param(name) || param_group(name) == HEAD_GROUP
}

/// Parameters of the autoencoder: encoders, latent projection and decoders.
pub fn is_autoencoder_param(name: &str) -> bool {
    is_encoder_param(name) || name.starts_with("latent.") || name.starts_with("decoder.")
}

/// Fused embedding of one sample projected to the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z: Array1<f64>,
    pub sample_id: String,
}

/// A batch of padded samples stacked per modality as `[B·L × D_m]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: [Array2<f64>; 3],
    pub lens: Vec<usize>,
    pub seq_len: usize,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn new(samples: &[&MultimodalSample], config: &EncoderStackConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let seq_len = config.seq_len;
        let dims = config.input_dims();
        for s in samples {
            if s.seq_len() != seq_len || s.dims() != dims {
                return Err(Error::Shape(format!(
                    "sample {} has shape ({}, {:?}); model expects ({seq_len}, {dims:?})",
                    s.sample_id,
                    s.seq_len(),
                    s.dims()
                )));
            }
        }
        let inputs = Modality::ALL.map(|m| {
            let d = dims[m.index()];
            let mut x = Array2::zeros((samples.len() * seq_len, d));
            for (b, s) in samples.iter().enumerate() {
                x.slice_mut(s![b * seq_len..(b + 1) * seq_len, ..])
                    .assign(s.modality(m));
            }
            x
        });
        Ok(Batch {
            inputs,
            lens: samples.iter().map(|s| s.valid_len).collect(),
            seq_len,
            ids: samples.iter().map(|s| s.sample_id.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    /// Reconstruction targets, `[B × L·D_m]` per modality.
    pub fn flat_targets(&self) -> [Array2<f64>; 3] {
        let b = self.len();
        self.inputs.clone().map(|x| {
            let cols = x.len() / b;
            x.into_shape_with_order((b, cols)).expect("contiguous batch")
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncodeCache {
    modalities: Vec<ModalityCache>,
}

/// Concatenates per-modality embeddings in text, visual, audio order.
pub fn fuse(text: &Array1<f64>, visual: &Array1<f64>, audio: &Array1<f64>) -> Array1<f64> {
    concatenate(Axis(0), &[text.view(), visual.view(), audio.view()]).expect("1-d concatenation")
}

/// Batched [`fuse`]: `[B × d]` blocks to `[B × 3d]`.
pub fn fuse_batch(parts: &[Array2<f64>; 3]) -> Array2<f64> {
    concatenate(Axis(1), &[parts[0].view(), parts[1].view(), parts[2].view()])
        .expect("equal batch sizes")
}

/// The full network: three modality encoders, a latent projection for
/// clustering, the classifier head and per-modality decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub config: EncoderStackConfig,
    pub encoders: [ModalityEncoder; 3],
    pub latent: Linear,
    pub head: ClassifierHead,
    pub decoders: [Mlp; 3],
    pub stage: StageTag,
}

impl EncoderStack {
    pub fn new(config: EncoderStackConfig, seed: u64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = &config.arch;
        let dims = config.input_dims();
        let encoders = dims.map(|d| {
            ModalityEncoder::new(
                d,
                config.seq_len,
                a.d_model,
                a.heads,
                a.layers,
                a.ff_dim,
                a.encoder_dropout,
                a.positional_encoding,
                &mut rng,
            )
        });
        let latent = Linear::new(config.joint_dim(), a.latent_dim, true, &mut rng);
        let head = ClassifierHead::new(config.joint_dim(), &a.head_widths, a.dropout, &mut rng);
        let decoders = dims.map(|d| {
            let mut widths = vec![a.latent_dim];
            widths.extend(&a.decoder_widths);
            widths.push(config.seq_len * d);
            Mlp::new(&widths, &mut rng)
        });
        Ok(EncoderStack {
            config,
            encoders,
            latent,
            head,
            decoders,
            stage: StageTag::Initialized,
        })
    }

    /// Encodes each modality and fuses the pooled embeddings: `[B × 3·d_model]`.
    pub fn encode(&self, batch: &Batch, mode: &mut Mode) -> (Array2<f64>, EncodeCache) {
        let mut parts = Vec::with_capacity(3);
        let mut caches = Vec::with_capacity(3);
        for m in Modality::ALL {
            let (p, c) = self.encoders[m.index()].forward(
                &batch.inputs[m.index()],
                batch.seq_len,
                &batch.lens,
                mode,
            );
            parts.push(p);
            caches.push(c);
        }
        let parts: [Array2<f64>; 3] = parts.try_into().expect("three modalities");
        (fuse_batch(&parts), EncodeCache { modalities: caches })
    }

    pub fn encode_backward(
        &self,
        batch: &Batch,
        cache: &EncodeCache,
        djoint: &Array2<f64>,
        grad: &mut EncoderStack,
    ) {
        let d = self.config.arch.d_model;
        for m in Modality::ALL {
            let k = m.index();
            let dpart = djoint.slice(s![.., k * d..(k + 1) * d]).to_owned();
            self.encoders[k].backward(
                &cache.modalities[k],
                &dpart,
                batch.seq_len,
                &batch.lens,
                &mut grad.encoders[k],
            );
        }
    }

    pub fn project_latent(&self, joint: &Array2<f64>) -> Array2<f64> {
        self.latent.forward(joint)
    }

    pub fn project_latent_backward(
        &self,
        joint: &Array2<f64>,
        dz: &Array2<f64>,
        grad: &mut EncoderStack,
    ) -> Array2<f64> {
        self.latent.backward(joint, dz, &mut grad.latent)
    }

    /// Reconstructions `[B × L·D_m]` per modality.
    pub fn decode(&self, z: &Array2<f64>) -> ([Array2<f64>; 3], [MlpCache; 3]) {
        let outs = self.decoders.each_ref().map(|d| d.forward(z));
        let [(a, ca), (b, cb), (c, cc)] = outs;
        ([a, b, c], [ca, cb, cc])
    }

    pub fn decode_backward(
        &self,
        caches: &[MlpCache; 3],
        drecon: &[Array2<f64>; 3],
        grad: &mut EncoderStack,
    ) -> Array2<f64> {
        let mut dz = self.decoders[0].backward(&caches[0], &drecon[0], &mut grad.decoders[0]);
        for k in 1..3 {
            dz += &self.decoders[k].backward(&caches[k], &drecon[k], &mut grad.decoders[k]);
        }
        dz
    }

    pub fn classify(&mut self, joint: &Array2<f64>, mode: &mut Mode) -> Result<(Array1<f64>, HeadCache)> {
        if joint.ncols() != self.config.joint_dim() {
            return Err(Error::Shape(format!(
                "joint representation has {} features, head expects {}",
                joint.ncols(),
                self.config.joint_dim()
            )));
        }
        self.head.forward(joint, mode)
    }

    pub fn classify_backward(
        &self,
        cache: &HeadCache,
        dlogits: &Array1<f64>,
        grad: &mut EncoderStack,
    ) -> Array2<f64> {
        self.head.backward(cache, dlogits, &mut grad.head)
    }

    /// Eval-mode logits for a batch.
    pub fn predict_logits(&mut self, batch: &Batch) -> Result<Array1<f64>> {
        let (joint, _) = self.encode(batch, &mut Mode::Eval);
        Ok(self.classify(&joint, &mut Mode::Eval)?.0)
    }

    /// Eval-mode latent codes `[B × d_z]` for a batch.
    pub fn latents(&self, batch: &Batch) -> Array2<f64> {
        let (joint, _) = self.encode(batch, &mut Mode::Eval);
        self.project_latent(&joint)
    }

    /// Eval-mode pooled embedding of one modality of one sample.
    pub fn encode_modality(&self, m: Modality, sample: &MultimodalSample) -> Result<Array1<f64>> {
        let batch = Batch::new(&[sample], &self.config)?;
        let (p, _) = self.encoders[m.index()].forward(
            &batch.inputs[m.index()],
            batch.seq_len,
            &batch.lens,
            &mut Mode::Eval,
        );
        Ok(p.row(0).to_owned())
    }

    /// Logit for a single joint vector. Training mode needs a batch and
    /// therefore fails here (batch normalization of one sample).
    pub fn classify_one(&mut self, joint: &Array1<f64>, mode: &mut Mode) -> Result<f64> {
        let x = joint.view().insert_axis(Axis(0)).to_owned();
        Ok(self.classify(&x, mode)?.0[0])
    }

    pub fn encode_to_latent(&self, sample: &MultimodalSample) -> Result<LatentCode> {
        let batch = Batch::new(&[sample], &self.config)?;
        let z = self.latents(&batch).row(0).to_owned();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite latent for {}",
                sample.sample_id
            )));
        }
        Ok(LatentCode {
            z,
            sample_id: sample.sample_id.clone(),
        })
    }

    /// Reconstruction `[L × D_m]` per modality from one latent code.
    pub fn decode_from_latent(&self, code: &LatentCode) -> Result<[Array2<f64>; 3]> {
        if code.z.len() != self.config.arch.latent_dim {
            return Err(Error::Shape(format!(
                "latent has {} entries, decoder expects {}",
                code.z.len(),
                self.config.arch.latent_dim
            )));
        }
        let z = code.z.view().insert_axis(Axis(0)).to_owned();
        let (outs, _) = self.decode(&z);
        let seq_len = self.config.seq_len;
        let dims = self.config.input_dims();
        Ok(Modality::ALL.map(|m| {
            let k = m.index();
            outs[k]
                .row(0)
                .to_owned()
                .into_shape_with_order((seq_len, dims[k]))
                .expect("decoder output matches input shape")
        }))
    }

    /// Copies every tensor of the named groups from `other`.
    pub fn copy_groups_from(&mut self, other: &EncoderStack, groups: &[&str]) -> Result<usize> {
        let mut source = Vec::new();
        other.visit("", &mut |name, shape, data| {
            if groups.contains(&param_group(name)) {
                source.push((name.to_string(), shape.to_vec(), data.to_vec()));
            }
        });
        let mut it = source.into_iter();
        let mut copied = 0;
        let mut mismatch = None;
        self.visit_mut("", &mut |name, shape, data| {
            if !groups.contains(&param_group(name)) {
                return;
            }
            match it.next() {
                Some((n, s, d)) if n == name && s == shape => {
                    data.copy_from_slice(&d);
                    copied += data.len();
                }
                other => {
                    if mismatch.is_none() {
                        mismatch = Some(format!(
                            "parameter {name} {shape:?} has no counterpart (found {:?})",
                            other.map(|(n, s, _)| (n, s))
                        ));
                    }
                }
            }
        });
        if let Some(m) = mismatch.or_else(|| it.next().map(|(n, _, _)| format!("extra source parameter {n}"))) {
            return Err(Error::Checkpoint(format!("group transfer failed: {m}")));
        }
        Ok(copied)
    }
}

impl Params for EncoderStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (enc, g) in self.encoders.iter().zip(ENCODER_GROUPS) {
            enc.visit(&join(prefix, g), f);
        }
        self.latent.visit(&join(prefix, LATENT_GROUP), f);
        self.head.visit(&join(prefix, HEAD_GROUP), f);
        for (dec, g) in self.decoders.iter().zip(DECODER_GROUPS) {
            dec.visit(&join(prefix, g), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (enc, g) in self.encoders.iter_mut().zip(ENCODER_GROUPS) {
            enc.visit_mut(&join(prefix, g), f);
        }
        self.latent.visit_mut(&join(prefix, LATENT_GROUP), f);
        self.head.visit_mut(&join(prefix, HEAD_GROUP), f);
        for (dec, g) in self.decoders.iter_mut().zip(DECODER_GROUPS) {
            dec.visit_mut(&join(prefix, g), f);
        }
    }
}

/// Trainable scalar counts per named group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterReport {
    pub groups: Vec<(String, usize)>,
}

impl ParameterReport {
    pub fn total(&self) -> usize {
        self.groups.iter().map(|(_, n)| n).sum()
    }

    /// Parameters of the classification network (encoders + head).
    pub fn classifier_total(&self) -> usize {
        self.groups
            .iter()
            .filter(|(g, _)| g.starts_with("encoder.") || g == HEAD_GROUP)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn group(&self, name: &str) -> Option<usize> {
        self.groups.iter().find(|(g, _)| g == name).map(|(_, n)| *n)
    }
}

impl fmt::Display for ParameterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (g, n) in &self.groups {
            writeln!(f, "{g:<16} {n:>10}")?;
        }
        writeln!(f, "{:<16} {:>10}", "classifier", self.classifier_total())?;
        write!(f, "{:<16} {:>10}", "total", self.total())
    }
}

pub fn count_parameters<P: Params>(params: &P) -> ParameterReport {
    let mut groups: Vec<(String, usize)> = Vec::new();
    params.visit("", &mut |name, _, data| {
        let g = param_group(name);
        match groups.last_mut() {
            Some((last, n)) if last == g => *n += data.len(),
            _ => groups.push((g.to_string(), data.len())),
        }
    });
    ParameterReport { groups }
}
