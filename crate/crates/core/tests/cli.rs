use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ndarray::Array2;

use semidec::cli::load_split;
use semidec::config::load_config;
use semidec::data::MultimodalSample;
use semidec::eval::{silhouette, LatentExport};
use semidec::model::Checkpoint;
use semidec::pipeline::resolve_checkpoint;

fn semidec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semidec"))
        .args(args)
        .env_remove("SEMIDEC_OUT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = semidec(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

#[test]
fn five_stage_sequence_then_evaluate_export_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let base = ["--preset", "desk", "--out", out];
    let start = Instant::now();
    for cmd in ["synth-data", "train-baseline", "pretrain-ae", "pretrain-dec", "finetune"] {
        let mut args = vec![cmd];
        args.extend_from_slice(&base);
        let line = ok(&args);
        assert_eq!(line.lines().count(), 1, "{line}");
    }
    assert!(start.elapsed() < Duration::from_secs(600));

    for sub in ["baseline", "pretrain_ae", "pretrain_dec", "finetune"] {
        let stage = dir.path().join(sub);
        for f in ["config.toml", "metrics.jsonl", "record.json", "best.txt"] {
            assert!(stage.join(f).is_file(), "{sub}/{f}");
        }
        assert!(!stage.join(".lock").exists());
        let snapshot = std::fs::read_to_string(stage.join("config.toml")).unwrap();
        assert!(snapshot.starts_with("# semidec 0.1.0 (checkpoint v1)"));
        assert!(snapshot.contains("seed = 0"));
    }

    let eval = ok(&["evaluate", "--preset", "desk", "--out", out]);
    assert!(eval.starts_with("evaluate: finetuned accuracy"));
    ok(&["evaluate", "--from", &format!("{out}/baseline"), "--preset", "desk", "--out", out]);
    let table = ok(&["report", "--out", out]);
    assert_eq!(table.matches("measured").count(), 2);
    assert!(dir.path().join("report.csv").is_file());

    let export = ok(&[
        "export-latents",
        "--preset",
        "desk",
        "--out",
        out,
        "--set",
        "eval.max_points=200",
        "--set",
        "eval.tsne_iterations=250",
    ]);
    assert!(export.starts_with("export-latents: 2000 rows"));
    let latents = std::fs::read_to_string(dir.path().join("latents/dec/latents.csv")).unwrap();
    assert_eq!(latents.lines().count(), 2001);
    assert!(dir.path().join("latents/dec/projection.svg").is_file());

    // The clustering space separates the classes better than the raw inputs.
    let config = load_config("desk", None, &[]).unwrap();
    let (split, _) = load_split(&config, dir.path()).unwrap();
    let mut samples = split.train_all();
    samples.extend(split.val_all());
    let samples: Vec<MultimodalSample> = samples.into_iter().take(600).collect();
    let refs: Vec<&MultimodalSample> = samples.iter().collect();
    let dec = Checkpoint::load(&resolve_checkpoint(&dir.path().join("pretrain_dec")).unwrap()).unwrap();
    let exported = LatentExport::compute(&dec.stack, &refs, dec.cluster.as_ref()).unwrap();
    let latent_score = exported.label_silhouette().unwrap();
    let width = samples[0].flat_input().len();
    let raw = Array2::from_shape_fn((samples.len(), width), |(i, j)| samples[i].flat_input()[j]);
    let labels: Vec<usize> = samples.iter().map(|s| s.true_label().unwrap().index()).collect();
    let raw_score = silhouette(&raw, &labels).unwrap();
    assert!(latent_score > raw_score, "latent {latent_score} vs raw {raw_score}");
}

#[test]
fn help_lists_commands_and_every_key() {
    let help = ok(&["--help"]);
    for cmd in [
        "synth-data",
        "ingest",
        "train-baseline",
        "pretrain-ae",
        "pretrain-dec",
        "finetune",
        "evaluate",
        "export-latents",
        "report",
    ] {
        assert!(help.contains(cmd), "{cmd}");
    }
    for key in [
        "data.label_fraction = 0.4",
        "baseline.learning_rate = 0.00004",
        "pretrain_ae.gamma = 0.001",
        "pretrain_dec.beta = 0.5",
        "finetune.mode = \"labeled_only\"",
        "eval.perplexity = 30.0",
        "run.out_dir = \"runs\"",
        "model.d_model = 64",
    ] {
        assert!(help.contains(key), "{key}");
    }
}

#[test]
fn report_without_runs_shows_reference_rows_only() {
    let dir = tempfile::tempdir().unwrap();
    let table = ok(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(table.matches(" | ").count(), 8 * 3);
    assert!(!table.contains("measured"));
}

#[test]
fn unknown_key_is_a_config_error_naming_it() {
    let o = semidec(&["train-baseline", "--set", "baseline.epohcs=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("baseline.epohcs"));
}

#[test]
fn validation_errors_are_aggregated() {
    let o = semidec(&[
        "train-baseline",
        "--set",
        "baseline.learning_rate=-0.1",
        "--set",
        "model.d_model=10",
        "--set",
        "model.heads=4",
        "--set",
        "data.label_fraction=1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("baseline.learning_rate"), "{err}");
    assert!(err.contains("model.d_model"), "{err}");
    assert!(err.contains("data.label_fraction"), "{err}");
}

#[test]
fn unknown_command_and_preset_fail() {
    assert_eq!(semidec(&["train-everything"]).status.code(), Some(2));
    assert_eq!(semidec(&["report", "--preset", "nope"]).status.code(), Some(2));
}

#[test]
fn missing_upstream_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = semidec(&["finetune", "--out", out]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("pretrain_dec"));
    assert!(!dir.path().join("finetune").exists());
    let o = semidec(&["train-baseline", "--out", out, "--set", "data.source=corpus"]);
    assert_eq!(o.status.code(), Some(5));
}

fn tiny(out: &str) -> Vec<String> {
    [
        "--preset",
        "desk",
        "--out",
        out,
        "--set",
        "synthetic.samples=200",
        "--set",
        "pretrain_ae.epochs=1",
        "--set",
        "pretrain_dec.epochs=1",
        "--set",
        "finetune.epochs=1",
        "--set",
        "baseline.epochs=1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_tiny(cmd: &str, extra: &[&str], out: &str) -> Output {
    let mut args = vec![cmd.to_string()];
    args.extend(extra.iter().map(|s| s.to_string()));
    args.extend(tiny(out));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    semidec(&refs)
}

#[test]
fn finetune_rejects_a_non_clustering_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(run_tiny("pretrain-ae", &[], out).status.success());
    let ae = format!("{out}/pretrain_ae");
    let o = run_tiny("finetune", &["--from", &ae], out);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    let o = run_tiny("finetune", &["--from", &ae, "--set", "finetune.allow_any_stage=true"], out);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn locked_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    std::fs::create_dir_all(dir.path().join("baseline")).unwrap();
    std::fs::write(dir.path().join("baseline/.lock"), "1").unwrap();
    let o = run_tiny("train-baseline", &[], out);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("locked"));
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_semidec"))
        .args(["synth-data", "--preset", "desk", "--set", "synthetic.samples=50"])
        .env("SEMIDEC_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("data/manifest.toml").is_file());
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "[baseline]\nepochs = 2\n[synthetic]\nsamples = 120\n").unwrap();
    let out = dir.path().join("out");
    let o = semidec(&[
        "train-baseline",
        "--preset",
        "desk",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "baseline.epochs=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(out.join("baseline/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[baseline]\nepochs = \"many\"\n").unwrap();
    let o = semidec(&["report", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_data_then_corpus_source_matches_in_memory_generation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(run_tiny("synth-data", &[], out).status.success());
    let cfg = load_config("desk", None, &["synthetic.samples=200".into()]).unwrap();
    let (mem, _) = load_split(&cfg, Path::new(out)).unwrap();
    let cfg = load_config("desk", None, &["synthetic.samples=200".into(), "data.source=corpus".into()])
        .unwrap();
    let (disk, _) = load_split(&cfg, Path::new(out)).unwrap();
    assert_eq!(mem.train_labeled.len(), disk.train_labeled.len());
    for (a, b) in mem.train_all().iter().zip(disk.train_all().iter()) {
        assert_eq!(a.sample_id, b.sample_id);
        assert_eq!(a.features, b.features);
    }
}
