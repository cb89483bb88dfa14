//! Experiment configuration: TOML sections, presets, overrides and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::data::{GeneratorSpec, SchemaConfig};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, EncoderStackConfig};
use crate::pipeline::{AutoencoderConfig, DecConfig, FinetuneConfig, TrainConfig};

/// Where the corpus comes from and how it is split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// `synthetic` generates a corpus from `[synthetic]`; `corpus` reads `path`.
    pub source: String,
    /// Corpus directory (written by `ingest` or `synth-data`).
    pub path: String,
    pub label_fraction: f64,
    pub val_fraction: f64,
    /// Seed of the label mask and the train/validation split.
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: "synthetic".into(),
            path: String::new(),
            label_fraction: 0.4,
            val_fraction: 0.2,
            split_seed: 0,
        }
    }
}

/// Latent export and 2-D projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub projection: bool,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub tsne_seed: u64,
    /// Cap on exported points for the projection; 0 means all.
    pub max_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            projection: true,
            perplexity: 30.0,
            tsne_iterations: 1000,
            tsne_seed: 0,
            max_points: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Model initialization, shuffling and dropout seed.
    pub seed: u64,
    /// Output root; each stage writes to a subdirectory named after it.
    pub out_dir: String,
    /// Continue an interrupted stage from its resume checkpoint.
    pub resume: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: "runs".into(),
            resume: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub synthetic: GeneratorSpec,
    pub schema: SchemaConfig,
    pub model: ArchConfig,
    pub baseline: TrainConfig,
    pub pretrain_ae: AutoencoderConfig,
    pub pretrain_dec: DecConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub run: RunConfig,
}

pub const PRESETS: [&str; 3] = ["default", "paper", "desk"];

impl ExperimentConfig {
    /// Named preset. `default` adds gradient clipping to the published
    /// hyperparameters, `paper` is the published setup verbatim, `desk` is a
    /// small synthetic setup that trains in minutes.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(ExperimentConfig::default()),
            "paper" => {
                let mut c = ExperimentConfig::default();
                c.baseline.clip_norm = 0.0;
                c.pretrain_ae.train.clip_norm = 0.0;
                c.pretrain_dec.train.clip_norm = 0.0;
                c.finetune.train.clip_norm = 0.0;
                c.data.source = "corpus".into();
                Ok(c)
            }
            "desk" => Ok(desk()),
            other => Err(Error::Config(vec![format!(
                "unknown preset {other:?}; choose one of {PRESETS:?}"
            )])),
        }
    }

    /// Model configuration for data matching `[schema]`.
    pub fn stack_config(&self) -> EncoderStackConfig {
        let s = &self.schema;
        EncoderStackConfig::new([s.text_dim, s.visual_dim, s.audio_dim], s.target_len, self.model.clone())
    }

    /// Every violated invariant, each naming its `section.key`.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match self.data.source.as_str() {
            "synthetic" => {}
            "corpus" => {}
            other => errs.push(format!(
                "data.source must be \"synthetic\" or \"corpus\", got {other:?}"
            )),
        }
        if !(self.data.label_fraction > 0.0 && self.data.label_fraction <= 1.0) {
            errs.push(format!(
                "data.label_fraction must be in (0, 1], got {}",
                self.data.label_fraction
            ));
        }
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            errs.push(format!(
                "data.val_fraction must be in (0, 1), got {}",
                self.data.val_fraction
            ));
        }
        errs.extend(self.synthetic.validate().into_iter().map(|e| prefix("synthetic", e)));
        if self.schema.target_len == 0 {
            errs.push("schema.target_len must be positive".into());
        }
        for (k, d) in [
            ("text_dim", self.schema.text_dim),
            ("visual_dim", self.schema.visual_dim),
            ("audio_dim", self.schema.audio_dim),
        ] {
            if d == 0 {
                errs.push(format!("schema.{k} must be positive"));
            }
        }
        errs.extend(self.model.validate());
        errs.extend(self.baseline.validate("baseline"));
        errs.extend(self.pretrain_ae.validate("pretrain_ae"));
        errs.extend(self.pretrain_dec.validate("pretrain_dec"));
        errs.extend(self.finetune.validate("finetune"));
        if !(self.eval.perplexity.is_finite() && self.eval.perplexity > 0.0) {
            errs.push(format!("eval.perplexity must be > 0, got {}", self.eval.perplexity));
        }
        if self.eval.tsne_iterations == 0 {
            errs.push("eval.tsne_iterations must be positive".into());
        }
        if self.run.out_dir.is_empty() {
            errs.push("run.out_dir must not be empty".into());
        }
        errs
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn prefix(section: &str, msg: String) -> String {
    if msg.starts_with(&format!("{section}.")) {
        msg
    } else {
        format!("{section}: {msg}")
    }
}

fn desk() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.synthetic = GeneratorSpec {
        samples: 2000,
        seed: 100,
        sample_noise: 1.0,
        seq_len_min: 4,
        seq_len_max: 12,
        text_dim: 24,
        visual_dim: 12,
        audio_dim: 16,
        ..GeneratorSpec::default()
    };
    c.schema = SchemaConfig {
        text_dim: 24,
        visual_dim: 12,
        audio_dim: 16,
        target_len: 10,
    };
    c.model = ArchConfig {
        d_model: 16,
        heads: 2,
        layers: 1,
        ff_dim: 32,
        latent_dim: 8,
        head_widths: vec![32, 16],
        decoder_widths: vec![32],
        ..ArchConfig::default()
    };
    let fast = |epochs, lr, wd| TrainConfig {
        epochs,
        batch_size: 64,
        learning_rate: lr,
        weight_decay: wd,
        ..TrainConfig::default()
    };
    c.baseline = fast(30, 1e-3, 1e-2);
    c.pretrain_ae.train = fast(40, 1e-3, 0.0);
    c.pretrain_dec.train = fast(20, 1e-3, 0.0);
    c.finetune.train = fast(30, 1e-3, 1e-2);
    c.eval.tsne_iterations = 500;
    c.eval.max_points = 600;
    c
}

/// Rejects keys that do not exist in the schema, naming each by path.
fn unknown_keys(user: &Table, reference: &Table, path: &str, out: &mut Vec<String>) {
    for (k, v) in user {
        let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match reference.get(k) {
            None => out.push(format!("unknown key {full}")),
            Some(Value::Table(r)) => match v {
                Value::Table(u) => unknown_keys(u, r, &full, out),
                _ => out.push(format!("{full} must be a table")),
            },
            Some(_) => {}
        }
    }
}

fn set_path(table: &mut Table, parts: &[&str], value: Value) -> std::result::Result<(), String> {
    let (head, rest) = parts.split_first().expect("non-empty key");
    if rest.is_empty() {
        table.insert(head.to_string(), value);
        return Ok(());
    }
    match table
        .entry(head.to_string())
        .or_insert_with(|| Value::Table(Table::new()))
    {
        Value::Table(t) => set_path(t, rest, value),
        _ => Err(format!("{head} is not a section")),
    }
}

fn reference_table() -> Table {
    let text = toml::to_string(&ExperimentConfig::default()).expect("defaults serialize");
    text.parse().expect("defaults parse")
}

/// Applies `section.key=value` overrides. Values parse as TOML, falling back
/// to a bare string.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<()> {
    let mut errs = Vec::new();
    for o in overrides {
        let Some((key, raw)) = o.split_once('=') else {
            errs.push(format!("override {o:?} is not of the form section.key=value"));
            continue;
        };
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            errs.push(format!("override key {key:?} is malformed"));
            continue;
        }
        if let Err(e) = set_path(table, &parts, value) {
            errs.push(format!("override key {key:?}: {e}"));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs))
    }
}

/// Builds a validated configuration from a preset, an optional file layered
/// on top, then command-line overrides. All problems are reported together.
pub fn load_config(
    preset: &str,
    file: Option<&Path>,
    overrides: &[String],
) -> Result<ExperimentConfig> {
    let base = ExperimentConfig::preset(preset)?;
    let mut table: Table = base.to_toml().parse().expect("preset parses");
    let mut user = Table::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::MissingArtifact {
            path: path.to_path_buf(),
            reason: format!("cannot read config: {e}"),
        })?;
        user = text
            .parse::<Table>()
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    }
    apply_overrides(&mut user, overrides)?;
    let mut errs = Vec::new();
    unknown_keys(&user, &reference_table(), "", &mut errs);
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    merge(&mut table, user);
    let config: ExperimentConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
    let errs = config.validate();
    if errs.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(errs))
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Every configuration key with its default, one `section.key = value` per line.
pub fn describe_keys() -> String {
    let mut out = String::new();
    for (section, v) in reference_table() {
        if let Value::Table(t) = v {
            for (k, v) in t {
                out.push_str(&format!("  {section}.{k} = {v}\n"));
            }
        }
    }
    out
}
