//! Command-line entry point: one subcommand per pipeline stage.

use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::config::{describe_keys, load_config, ExperimentConfig};
use crate::data::{
    generate_synthetic_corpus, ingest_mosi, pad_all, prepare_split, read_corpus, write_corpus,
    CorpusSplit, MultimodalSample, CORPUS_VERSION,
};
use crate::error::{Error, Result};
use crate::eval::{
    comparison_csv, comparison_table, evaluate, export_latents, static_rows, LatentExport,
    TableRow, TsneConfig,
};
use crate::model::{count_parameters, Checkpoint, EncoderStackConfig, StageTag};
use crate::pipeline::{
    pretrain_autoencoder, pretrain_dec, provenance, resolve_checkpoint, train_baseline,
    transfer_and_finetune, unmask, RunDir, StageContext, StageOutput, CONFIG_FILE,
};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SEMIDEC_OUT";
pub const DATA_DIR: &str = "data";
pub const EVAL_DIR: &str = "eval";
pub const LATENT_DIR: &str = "latents";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Parser)]
#[command(
    name = "semidec",
    version,
    about = "Semi-supervised multimodal sentiment classification with deep embedded clustering"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file layered over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base preset: default, paper or desk.
    #[arg(long, global = true, default_value = "default")]
    pub preset: String,
    /// Override one key, e.g. `--set baseline.epochs=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run seed (overrides run.seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root (overrides run.out_dir).
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalPool {
    /// Validation samples with a visible label.
    Labeled,
    /// Every validation sample, hidden labels included.
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and write it under `<out>/data`.
    SynthData,
    /// Validate and pad an external feature set, writing it under `<out>/data`.
    Ingest {
        #[arg(long)]
        input: PathBuf,
    },
    /// Supervised baseline on the labeled pool.
    TrainBaseline,
    /// Autoencoder pretraining on both pools.
    PretrainAe,
    /// Clustering pretraining, starting from the autoencoder stage.
    PretrainDec {
        /// Stage directory or checkpoint; defaults to `<out>/pretrain_ae`.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Transfer the pretrained encoders and train a fresh classifier head.
    Finetune {
        /// Stage directory or checkpoint; defaults to `<out>/pretrain_dec`.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Accuracy and F1 of a classifier on the validation set.
    Evaluate {
        /// Stage directory or checkpoint; defaults to `<out>/finetune`.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "labeled")]
        pool: EvalPool,
    },
    /// Write latent codes, and optionally a 2-D projection, of every sample.
    ExportLatents {
        /// Stage directory or checkpoint; defaults to `<out>/pretrain_dec`.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Defaults to `<out>/latents/<stage>`.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Comparison table of the reference results and every evaluated run.
    Report,
}

/// Parses `args` (program name first) and runs the command. Returns the text
/// to print on success.
pub fn run_from_args<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let help = format!("Configuration keys and defaults:\n{}", describe_keys());
    let cmd = Cli::command().after_long_help(help);
    let matches = match cmd.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                return Ok(e.to_string().trim_end().to_string())
            }
            _ => return Err(Error::config(e.to_string().trim_end())),
        },
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Error::config(e.to_string()))?;
    run(&cli)
}

/// Subdirectory of the output root written by each stage.
pub fn stage_dir(tag: StageTag) -> &'static str {
    match tag {
        StageTag::Baseline => "baseline",
        StageTag::Autoencoder => "pretrain_ae",
        StageTag::Dec => "pretrain_dec",
        StageTag::Finetuned => "finetune",
        StageTag::Initialized => "initialized",
    }
}

pub fn resolve_config(global: &GlobalArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut overrides = global.overrides.clone();
    if let Some(seed) = global.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    let config = load_config(&global.preset, global.config.as_deref(), &overrides)?;
    let out = global
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.run.out_dir));
    Ok((config, out))
}

pub fn run(cli: &Cli) -> Result<String> {
    let (config, out) = resolve_config(&cli.global)?;
    match &cli.command {
        Command::SynthData => {
            let samples = synthetic_corpus(&config)?;
            let dest = out.join(DATA_DIR);
            write_corpus(&dest, &samples)?;
            Ok(format!(
                "synth-data: {} samples, length {}, dims {:?} -> {}",
                samples.len(),
                samples[0].seq_len(),
                samples[0].dims(),
                dest.display()
            ))
        }
        Command::Ingest { input } => {
            let samples = ingest_mosi(input, &config.schema)?;
            if samples.is_empty() {
                return Err(Error::Data(format!("{} holds no samples", input.display())));
            }
            let dest = out.join(DATA_DIR);
            write_corpus(&dest, &samples)?;
            let labeled = samples.iter().filter(|s| s.binary_label().is_some()).count();
            Ok(format!(
                "ingest: {} samples ({labeled} with a binary label) -> {}",
                samples.len(),
                dest.display()
            ))
        }
        Command::TrainBaseline => {
            let (split, model) = load_split(&config, &out)?;
            stage(&config, &out, StageTag::Baseline, |ctx| {
                train_baseline(&split, &model, &config.baseline, ctx)
            })
        }
        Command::PretrainAe => {
            let (split, model) = load_split(&config, &out)?;
            stage(&config, &out, StageTag::Autoencoder, |ctx| {
                pretrain_autoencoder(&split, &model, &config.pretrain_ae, ctx)
            })
        }
        Command::PretrainDec { from } => {
            let source = load_upstream(from.as_deref(), &out, StageTag::Autoencoder)?;
            let (split, _) = load_split(&config, &out)?;
            stage(&config, &out, StageTag::Dec, |ctx| {
                pretrain_dec(&source, &split, &config.pretrain_dec, ctx)
            })
        }
        Command::Finetune { from } => {
            let source = load_upstream(from.as_deref(), &out, StageTag::Dec)?;
            let (split, _) = load_split(&config, &out)?;
            stage(&config, &out, StageTag::Finetuned, |ctx| {
                transfer_and_finetune(&source, &split, &config.finetune, ctx)
            })
        }
        Command::Evaluate { from, pool } => {
            let source = load_upstream(from.as_deref(), &out, StageTag::Finetuned)?;
            let (split, _) = load_split(&config, &out)?;
            let samples = match pool {
                EvalPool::Labeled => split.val_labeled.clone(),
                EvalPool::All => unmask(&split.val_all()),
            };
            let refs: Vec<&MultimodalSample> = samples.iter().collect();
            let mut report = evaluate(&source.stack, &refs)?;
            report.label_fraction = Some(config.data.label_fraction);
            let name = format!(
                "{} ({:.0}% labeled, {})",
                source.stage(),
                100.0 * config.data.label_fraction,
                match pool {
                    EvalPool::Labeled => "labeled val",
                    EvalPool::All => "all val",
                }
            );
            let row = TableRow::measured(name, &report, &count_parameters(&source.stack));
            let dir = out.join(EVAL_DIR);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let file = dir.join(format!("{}-{}.json", source.stage(), pool_name(*pool)));
            let json = serde_json::json!({ "report": report, "row": row });
            let text = serde_json::to_string_pretty(&json).expect("reports serialize") + "\n";
            std::fs::write(&file, text).map_err(|e| Error::io(&file, e))?;
            Ok(format!(
                "evaluate: {} accuracy {:.4} f1 {:.4} macro-f1 {:.4} on {} samples -> {}",
                source.stage(),
                report.accuracy,
                report.f1,
                report.macro_f1,
                report.samples,
                file.display()
            ))
        }
        Command::ExportLatents { from, dest } => {
            let source = load_upstream(from.as_deref(), &out, StageTag::Dec)?;
            let (split, _) = load_split(&config, &out)?;
            let mut samples = split.train_all();
            samples.extend(split.val_all());
            let refs: Vec<&MultimodalSample> = samples.iter().collect();
            let export = LatentExport::compute(&source.stack, &refs, source.cluster.as_ref())?;
            let dest = dest
                .clone()
                .unwrap_or_else(|| out.join(LATENT_DIR).join(source.stage().as_str()));
            let tsne = TsneConfig {
                perplexity: config.eval.perplexity,
                iterations: config.eval.tsne_iterations,
                seed: config.eval.tsne_seed,
                ..TsneConfig::default()
            };
            let summary = export_latents(
                &export,
                &dest,
                config.eval.projection.then_some(&tsne),
                config.eval.max_points,
            )?;
            Ok(format!(
                "export-latents: {} rows, silhouette {} -> {}",
                summary.rows,
                summary
                    .silhouette
                    .map_or_else(|| "n/a".to_string(), |s| format!("{s:.4}")),
                dest.display()
            ))
        }
        Command::Report => {
            let rows = measured_rows(&out.join(EVAL_DIR))?;
            let table = comparison_table(&rows, &static_rows());
            if out.is_dir() {
                let p = out.join(REPORT_FILE);
                std::fs::write(&p, &table).map_err(|e| Error::io(&p, e))?;
                let c = out.join(REPORT_CSV);
                std::fs::write(&c, comparison_csv(&rows, &static_rows()))
                    .map_err(|e| Error::io(&c, e))?;
            }
            Ok(table.trim_end().to_string())
        }
    }
}

fn pool_name(p: EvalPool) -> &'static str {
    match p {
        EvalPool::Labeled => "labeled",
        EvalPool::All => "all",
    }
}

/// Measured rows saved by `evaluate`, in file-name order.
pub fn measured_rows(dir: &Path) -> Result<Vec<TableRow>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", p.display())))?;
            serde_json::from_value(v["row"].take())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn synthetic_corpus(config: &ExperimentConfig) -> Result<Vec<MultimodalSample>> {
    pad_all(
        &generate_synthetic_corpus(&config.synthetic)?,
        config.schema.target_len,
    )
}

/// Corpus named by the configuration: `data.path`, else `<out>/data` for
/// `corpus` sources, else a freshly generated synthetic corpus.
pub fn load_corpus(config: &ExperimentConfig, out: &Path) -> Result<Vec<MultimodalSample>> {
    let dir = if !config.data.path.is_empty() {
        PathBuf::from(&config.data.path)
    } else if config.data.source == "corpus" {
        out.join(DATA_DIR)
    } else {
        return synthetic_corpus(config);
    };
    if !dir.is_dir() {
        return Err(Error::MissingArtifact {
            path: dir,
            reason: "no corpus here; run synth-data or ingest first".into(),
        });
    }
    read_corpus(&dir)
}

/// Masked, split and normalized corpus plus the model shape it implies.
pub fn load_split(config: &ExperimentConfig, out: &Path) -> Result<(CorpusSplit, EncoderStackConfig)> {
    let samples = load_corpus(config, out)?;
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("the corpus is empty".into()))?;
    let model = EncoderStackConfig::new(first.dims(), first.seq_len(), config.model.clone());
    let (split, _) = prepare_split(
        &samples,
        config.data.label_fraction,
        config.data.val_fraction,
        config.data.split_seed,
    )?;
    Ok((split, model))
}

fn load_upstream(from: Option<&Path>, out: &Path, default: StageTag) -> Result<Checkpoint> {
    let dir = from.map_or_else(|| out.join(stage_dir(default)), Path::to_path_buf);
    Checkpoint::load(&resolve_checkpoint(&dir)?)
}

/// Configuration snapshot with the build and format versions on top.
pub fn config_snapshot(config: &ExperimentConfig) -> String {
    format!(
        "# {} / corpus format v{CORPUS_VERSION}\n# config hash {}\n{}",
        provenance(),
        config.hash(),
        config.to_toml()
    )
}

fn stage<F>(config: &ExperimentConfig, out: &Path, tag: StageTag, body: F) -> Result<String>
where
    F: FnOnce(&StageContext) -> Result<StageOutput>,
{
    let dir = out.join(stage_dir(tag));
    let run = RunDir::open(&dir)?;
    run.write_text(CONFIG_FILE, &config_snapshot(config))?;
    let hash = config.hash();
    let ctx = StageContext {
        seed: config.run.seed,
        run: Some(&run),
        resume: config.run.resume,
        config_hash: &hash,
    };
    let output = body(&ctx)?;
    let rec = output
        .record
        .selected()
        .or(output.record.last())
        .ok_or_else(|| Error::State("stage produced no epochs".into()))?;
    let checkpoint = resolve_checkpoint(&dir)?;
    let metric = match (rec.val_accuracy, output.record.last().and_then(|r| r.purity)) {
        (Some(acc), Some(purity)) if tag == StageTag::Dec => {
            format!("val accuracy {acc:.4}, purity {purity:.4}")
        }
        (Some(acc), _) => format!(
            "val accuracy {acc:.4}, f1 {:.4}",
            rec.val_f1.unwrap_or(f64::NAN)
        ),
        (None, _) => format!("val loss {:.6}", rec.val_loss),
    };
    Ok(format!(
        "{}: epoch {} {metric} -> {}",
        tag.as_str(),
        rec.epoch,
        checkpoint.display()
    ))
}
