use serde::{Deserialize, Serialize};

/// Architecture hyperparameters that do not depend on the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    /// Dropout after the batch-normalized classifier layer.
    pub dropout: f64,
    /// Dropout on the residual branches inside each transformer block.
    pub encoder_dropout: f64,
    pub latent_dim: usize,
    /// Classifier hidden widths; a final 1-logit layer is appended.
    pub head_widths: Vec<usize>,
    /// Hidden widths of each per-modality decoder MLP.
    pub decoder_widths: Vec<usize>,
    pub positional_encoding: bool,
}

impl Default for ArchConfig {
    /// Shipped default, sized so the classification network has roughly
    /// 851k trainable parameters with 300/47/74-dim inputs.
    fn default() -> Self {
        ArchConfig {
            d_model: 64,
            heads: 4,
            layers: 2,
            ff_dim: 256,
            dropout: 0.3,
            encoder_dropout: 0.1,
            latent_dim: 64,
            head_widths: vec![1024, 288, 64],
            decoder_widths: vec![128],
            positional_encoding: true,
        }
    }
}

impl ArchConfig {
    /// Aggregated list of violated invariants, each naming its `model.*` key.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.d_model == 0 {
            errs.push("model.d_model must be positive".to_string());
        }
        if self.heads == 0 {
            errs.push("model.heads must be positive".to_string());
        } else if !self.d_model.is_multiple_of(self.heads) {
            errs.push(format!(
                "model.d_model ({}) must be divisible by model.heads ({})",
                self.d_model, self.heads
            ));
        }
        if self.ff_dim == 0 {
            errs.push("model.ff_dim must be positive".to_string());
        }
        if self.latent_dim == 0 {
            errs.push("model.latent_dim must be positive".to_string());
        }
        for (key, p) in [("dropout", self.dropout), ("encoder_dropout", self.encoder_dropout)] {
            if !(0.0..1.0).contains(&p) {
                errs.push(format!("model.{key} must be in [0, 1), got {p}"));
            }
        }
        if self.head_widths.is_empty() {
            errs.push("model.head_widths needs at least one hidden width".to_string());
        }
        let mut chain = self.head_widths.clone();
        chain.push(1);
        if chain.windows(2).any(|w| w[0] <= w[1]) {
            errs.push(format!(
                "model.head_widths must be strictly decreasing down to the 1-logit output, got {:?}",
                self.head_widths
            ));
        }
        if self.decoder_widths.contains(&0) {
            errs.push("model.decoder_widths entries must be positive".to_string());
        }
        errs
    }
}

/// Full encoder-stack configuration: data-dependent shapes plus architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderStackConfig {
    pub text_dim: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub seq_len: usize,
    #[serde(flatten)]
    pub arch: ArchConfig,
}

impl EncoderStackConfig {
    pub fn new(input_dims: [usize; 3], seq_len: usize, arch: ArchConfig) -> Self {
        EncoderStackConfig {
            text_dim: input_dims[0],
            visual_dim: input_dims[1],
            audio_dim: input_dims[2],
            seq_len,
            arch,
        }
    }

    pub fn input_dims(&self) -> [usize; 3] {
        [self.text_dim, self.visual_dim, self.audio_dim]
    }

    pub fn joint_dim(&self) -> usize {
        3 * self.arch.d_model
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.arch.validate();
        for (k, d) in [
            ("text_dim", self.text_dim),
            ("visual_dim", self.visual_dim),
            ("audio_dim", self.audio_dim),
            ("seq_len", self.seq_len),
        ] {
            if d == 0 {
                errs.push(format!("model {k} must be positive"));
            }
        }
        errs
    }
}
