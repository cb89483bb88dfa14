mod common;

use common::{tiny_model, tiny_spec, tiny_split};
use semidec::dec::ClusterState;
use semidec::error::Error;
use semidec::model::{Checkpoint, EncoderStack, StageTag, ENCODER_GROUPS};
use semidec::nn::Params;
use semidec::pipeline::{
    pretrain_autoencoder, pretrain_dec, train_baseline, transfer_and_finetune, transfer_encoders,
    AutoencoderConfig, DecConfig, FinetuneConfig, RunDir, StageContext, TrainConfig,
};

fn fast_train(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: lr,
        ..TrainConfig::default()
    }
}

fn ae_config(epochs: usize) -> AutoencoderConfig {
    AutoencoderConfig {
        train: TrainConfig {
            weight_decay: 0.0,
            ..fast_train(epochs, 3e-3)
        },
        ..AutoencoderConfig::default()
    }
}

fn dec_config(epochs: usize) -> DecConfig {
    DecConfig {
        train: TrainConfig {
            weight_decay: 0.0,
            ..fast_train(epochs, 1e-3)
        },
        ..DecConfig::default()
    }
}

#[test]
fn baseline_separates_a_noise_free_corpus() {
    let spec = tiny_spec(200, 0.0, 3);
    let split = tiny_split(&spec, 0.5, 1);
    let out = train_baseline(&split, &tiny_model(&spec), &fast_train(50, 3e-3), &StageContext::in_memory(7))
        .unwrap();
    let best = out.record.selected().unwrap();
    assert_eq!(best.val_accuracy, Some(1.0));
    assert_eq!(out.stack.stage, StageTag::Baseline);
}

#[test]
fn baseline_is_deterministic() {
    let spec = tiny_spec(80, 1.0, 4);
    let split = tiny_split(&spec, 0.5, 2);
    let run = || {
        train_baseline(&split, &tiny_model(&spec), &fast_train(3, 1e-3), &StageContext::in_memory(9))
            .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.record, b.record);
    assert_eq!(a.stack, b.stack);
}

#[test]
fn baseline_rejects_empty_labeled_pool() {
    let spec = tiny_spec(40, 1.0, 4);
    let mut split = tiny_split(&spec, 0.5, 2);
    split.train_labeled.clear();
    let err = train_baseline(&split, &tiny_model(&spec), &fast_train(1, 1e-3), &StageContext::in_memory(0))
        .unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn autoencoder_reduces_reconstruction_error() {
    let spec = tiny_spec(120, 1.0, 5);
    let split = tiny_split(&spec, 0.4, 3);
    let out = pretrain_autoencoder(&split, &tiny_model(&spec), &ae_config(20), &StageContext::in_memory(1))
        .unwrap();
    let first = out.record.epochs.first().unwrap().recon.unwrap();
    let last = out.record.last().unwrap().recon.unwrap();
    assert!(last < first, "recon {first} -> {last}");
    assert_eq!(out.stack.stage, StageTag::Autoencoder);
}

#[test]
fn autoencoder_with_zero_gamma_is_pure_reconstruction() {
    let spec = tiny_spec(60, 1.0, 5);
    let split = tiny_split(&spec, 0.4, 3);
    let mut cfg = ae_config(2);
    cfg.gamma = 0.0;
    let out = pretrain_autoencoder(&split, &tiny_model(&spec), &cfg, &StageContext::in_memory(1)).unwrap();
    for r in &out.record.epochs {
        assert_eq!(r.train_loss, r.recon.unwrap());
    }
    let again = pretrain_autoencoder(&split, &tiny_model(&spec), &cfg, &StageContext::in_memory(1)).unwrap();
    assert_eq!(out.record, again.record);
}

#[test]
fn trained_autoencoder_beats_the_zero_decoder() {
    let spec = tiny_spec(50, 0.5, 8);
    let split = tiny_split(&spec, 0.4, 3);
    let out = pretrain_autoencoder(&split, &tiny_model(&spec), &ae_config(60), &StageContext::in_memory(2))
        .unwrap();
    let samples = split.train_all();
    let mut err = 0.0;
    let mut zero = 0.0;
    for s in &samples {
        let code = out.stack.encode_to_latent(s).unwrap();
        let recon = out.stack.decode_from_latent(&code).unwrap();
        for (x, xh) in s.features.iter().zip(&recon) {
            err += (x - xh).mapv(|v| v * v).sum();
            zero += x.mapv(|v| v * v).sum();
        }
    }
    assert!(err < zero, "trained {err} vs zero decoder {zero}");
}

fn stage_a(spec: &semidec::data::GeneratorSpec, split: &semidec::data::CorpusSplit, epochs: usize) -> Checkpoint {
    pretrain_autoencoder(split, &tiny_model(spec), &ae_config(epochs), &StageContext::in_memory(1))
        .unwrap()
        .checkpoint()
}

#[test]
fn stage_a_separates_class_centroids_in_latent_space() {
    let spec = tiny_spec(120, 0.5, 12);
    let split = tiny_split(&spec, 0.4, 3);
    let ae = stage_a(&spec, &split, 15);
    let mut sums = [ndarray::Array1::<f64>::zeros(4), ndarray::Array1::zeros(4)];
    let mut counts = [0.0; 2];
    for s in split.train_all() {
        let c = s.true_label().unwrap().index();
        sums[c] += &ae.stack.encode_to_latent(&s).unwrap().z;
        counts[c] += 1.0;
    }
    let d = (&sums[0] / counts[0] - &sums[1] / counts[1]).mapv(|v| v * v).sum().sqrt();
    assert!(d > 0.0);
}

#[test]
fn clustering_keeps_or_improves_purity() {
    let spec = tiny_spec(160, 1.0, 6);
    let split = tiny_split(&spec, 0.4, 3);
    let ae = stage_a(&spec, &split, 10);
    let out = pretrain_dec(&ae, &split, &dec_config(10), &StageContext::in_memory(4)).unwrap();
    let init = out.initial_purity.unwrap();
    let end = out.record.last().unwrap().purity.unwrap();
    assert!(end >= init, "purity {init} -> {end}");
    assert_eq!(out.stack.stage, StageTag::Dec);
    let cluster: &ClusterState = out.cluster.as_ref().unwrap();
    assert!(cluster.validate().is_ok());
}

#[test]
fn clustering_without_supervision_runs_and_is_deterministic() {
    let spec = tiny_spec(80, 1.0, 6);
    let split = tiny_split(&spec, 0.4, 3);
    let ae = stage_a(&spec, &split, 2);
    let mut cfg = dec_config(2);
    cfg.beta = 0.0;
    let a = pretrain_dec(&ae, &split, &cfg, &StageContext::in_memory(4)).unwrap();
    let b = pretrain_dec(&ae, &split, &cfg, &StageContext::in_memory(4)).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.cluster, b.cluster);
}

#[test]
fn stage_order_is_enforced() {
    let spec = tiny_spec(60, 1.0, 6);
    let split = tiny_split(&spec, 0.4, 3);
    let fresh = Checkpoint::new(EncoderStack::new(tiny_model(&spec), 0).unwrap());
    let err = pretrain_dec(&fresh, &split, &dec_config(1), &StageContext::in_memory(0)).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
    let ae = stage_a(&spec, &split, 1);
    let err = transfer_and_finetune(&ae, &split, &FinetuneConfig::default(), &StageContext::in_memory(0))
        .unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
    let cfg = FinetuneConfig {
        train: fast_train(1, 1e-3),
        allow_any_stage: true,
        ..FinetuneConfig::default()
    };
    assert!(transfer_and_finetune(&ae, &split, &cfg, &StageContext::in_memory(0)).is_ok());
}

#[test]
fn transferred_encoders_are_bit_identical() {
    let spec = tiny_spec(60, 1.0, 6);
    let split = tiny_split(&spec, 0.4, 3);
    let ae = stage_a(&spec, &split, 2);
    let dec = pretrain_dec(&ae, &split, &dec_config(1), &StageContext::in_memory(4)).unwrap();
    let moved = transfer_encoders(&dec.stack, 99).unwrap();
    let bits = |s: &EncoderStack| {
        let mut out = Vec::new();
        s.visit("", &mut |name, _, d| {
            if ENCODER_GROUPS.iter().any(|g| name.starts_with(&format!("{g}."))) {
                out.extend(d.iter().map(|v| v.to_bits()));
            }
        });
        out
    };
    assert_eq!(bits(&moved), bits(&dec.stack));
    assert_ne!(moved.head, dec.stack.head);
    assert_eq!(moved.head, EncoderStack::new(tiny_model(&spec), 99).unwrap().head);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let spec = tiny_spec(60, 1.0, 7);
    let split = tiny_split(&spec, 0.5, 3);
    let model = tiny_model(&spec);
    let full = train_baseline(&split, &model, &fast_train(2, 1e-3), &StageContext::in_memory(5)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    {
        let run = RunDir::open(dir.path()).unwrap();
        let ctx = StageContext { seed: 5, run: Some(&run), resume: false, config_hash: "" };
        train_baseline(&split, &model, &fast_train(1, 1e-3), &ctx).unwrap();
    }
    let run = RunDir::open(dir.path()).unwrap();
    let ctx = StageContext { seed: 5, run: Some(&run), resume: true, config_hash: "" };
    let resumed = train_baseline(&split, &model, &fast_train(2, 1e-3), &ctx).unwrap();
    assert_eq!(resumed.record.epochs, full.record.epochs);
    assert_eq!(resumed.stack, full.stack);
    assert_eq!(run.read_metrics().unwrap(), full.record.epochs);
}

#[test]
fn resumed_clustering_matches_uninterrupted() {
    let spec = tiny_spec(60, 1.0, 7);
    let split = tiny_split(&spec, 0.5, 3);
    let ae = stage_a(&spec, &split, 2);
    let full = pretrain_dec(&ae, &split, &dec_config(2), &StageContext::in_memory(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    {
        let run = RunDir::open(dir.path()).unwrap();
        let ctx = StageContext { seed: 5, run: Some(&run), resume: false, config_hash: "" };
        pretrain_dec(&ae, &split, &dec_config(1), &ctx).unwrap();
    }
    let run = RunDir::open(dir.path()).unwrap();
    let ctx = StageContext { seed: 5, run: Some(&run), resume: true, config_hash: "" };
    let resumed = pretrain_dec(&ae, &split, &dec_config(2), &ctx).unwrap();
    assert_eq!(resumed.record.epochs, full.record.epochs);
    assert_eq!(resumed.cluster, full.cluster);
    assert_eq!(resumed.stack, full.stack);
}
