use std::time::Instant;

use log::{info, warn};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{AutoencoderConfig, DecConfig, FinetuneConfig, FinetuneMode, TrainConfig};
use super::record::{better, select_best, EpochRecord, RunRecord, SelectionRule};
use super::rundir::RunDir;
use crate::data::{CorpusSplit, MultimodalSample, Sentiment};
use crate::dec::{
    class_probabilities, init_centroids, reseed_degenerate, soft_assign, target_distribution,
    ClusterState, LossTerms, LossWeights,
};
use crate::error::{Error, Result};
use crate::eval::{predict_class, predict_logits, visible_labels, Confusion, EVAL_BATCH};
use crate::model::{
    is_autoencoder_param, is_classifier_param, Batch, Checkpoint, EncoderStack,
    EncoderStackConfig, StageTag, ENCODER_GROUPS,
};
use crate::nn::{join, Adam, Mode, Params};
use crate::objective::{
    bce_with_logits, classifier_loss_and_grad, composite_loss_and_grad, ClusterTargets,
};

/// Settings shared by every stage run.
#[derive(Debug, Clone, Copy)]
pub struct StageContext<'a> {
    pub seed: u64,
    /// Where to write metrics and checkpoints; `None` keeps everything in memory.
    pub run: Option<&'a RunDir>,
    /// Continue from the run directory's resume checkpoint when present.
    pub resume: bool,
    pub config_hash: &'a str,
}

impl<'a> StageContext<'a> {
    pub fn in_memory(seed: u64) -> Self {
        StageContext {
            seed,
            run: None,
            resume: false,
            config_hash: "",
        }
    }
}

/// Result of one stage.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub stack: EncoderStack,
    pub cluster: Option<ClusterState>,
    pub record: RunRecord,
    /// Purity of the centroids' initial hard assignment (clustering stage).
    pub initial_purity: Option<f64>,
}

impl StageOutput {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            stack: self.stack.clone(),
            cluster: self.cluster.clone(),
            optimizer: None,
            epoch: self.record.selected_epoch.unwrap_or(0),
        }
    }
}

/// Per-epoch RNG, derived from the run seed, the stage and the epoch, so a
/// resumed run draws the same shuffles and dropout masks.
pub fn epoch_rng(seed: u64, stage: StageTag, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage as u64) << 32) | epoch as u64);
    rng
}

/// Shuffled mini-batches of `0..n`. A trailing batch of one joins the
/// previous batch, since batch statistics need two rows.
pub fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn pick<'s>(samples: &[&'s MultimodalSample], idx: &[usize]) -> Vec<&'s MultimodalSample> {
    idx.iter().map(|&i| samples[i]).collect()
}

fn rows(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

/// Eval-mode latents `[N × d_z]`.
pub fn latents_of(stack: &EncoderStack, samples: &[&MultimodalSample]) -> Result<Array2<f64>> {
    let mut parts = Vec::new();
    for chunk in samples.chunks(EVAL_BATCH) {
        parts.push(stack.latents(&Batch::new(chunk, &stack.config)?));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Share of samples (with a known class) whose cluster's majority class is
/// their own.
pub fn cluster_purity(assign: &[usize], truth: &[Option<Sentiment>], k: usize) -> f64 {
    let mut counts = vec![[0usize; 2]; k];
    let mut n = 0;
    for (&j, t) in assign.iter().zip(truth) {
        if let Some(t) = t {
            counts[j][t.index()] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    counts.iter().map(|c| c[0].max(c[1])).sum::<usize>() as f64 / n as f64
}

fn argmax_rows(q: &Array2<f64>) -> Vec<usize> {
    q.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                .0
        })
        .collect()
}

fn stage_label(stage: StageTag) -> &'static str {
    match stage {
        StageTag::Baseline => "baseline",
        StageTag::Autoencoder => "pretrain-ae",
        StageTag::Dec => "pretrain-dec",
        StageTag::Finetuned => "finetune",
        StageTag::Initialized => "init",
    }
}

/// Resume state read back from a run directory.
struct Resumed {
    checkpoint: Checkpoint,
    records: Vec<EpochRecord>,
}

fn load_resume(ctx: &StageContext, stage: StageTag) -> Result<Option<Resumed>> {
    let Some(run) = ctx.run.filter(|_| ctx.resume) else {
        return Ok(None);
    };
    let Some(checkpoint) = run.load_resume()? else {
        return Ok(None);
    };
    if checkpoint.stage() != stage {
        return Err(Error::Checkpoint(format!(
            "resume checkpoint belongs to stage {}, not {stage}",
            checkpoint.stage()
        )));
    }
    let mut records = run.read_metrics()?;
    records.truncate(checkpoint.epoch);
    if records.len() != checkpoint.epoch {
        return Err(Error::Checkpoint(format!(
            "metrics log has {} epochs but the resume checkpoint is at epoch {}",
            records.len(),
            checkpoint.epoch
        )));
    }
    run.reset_metrics(&records)?;
    info!("resuming {stage} after epoch {}", checkpoint.epoch);
    Ok(Some(Resumed {
        checkpoint,
        records,
    }))
}

fn finish(run: Option<&RunDir>, record: &mut RunRecord, started: Instant) -> Result<()> {
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(run) = run {
        run.write_record(record)?;
    }
    Ok(())
}

/// Classifier training with BCE, shared by the baseline and fine-tuning.
fn train_classifier(
    mut stack: EncoderStack,
    train: &[&MultimodalSample],
    val: &[&MultimodalSample],
    cfg: &TrainConfig,
    stage: StageTag,
    ctx: &StageContext,
) -> Result<StageOutput> {
    let errs = cfg.validate(stage_label(stage));
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if train.len() < 2 {
        return Err(Error::Data(format!(
            "{stage} training needs at least 2 labeled samples, got {}",
            train.len()
        )));
    }
    if val.is_empty() {
        return Err(Error::Data(format!("{stage} needs a non-empty labeled validation pool")));
    }
    let started = Instant::now();
    let train_labels = visible_labels(train)?;
    let val_labels = visible_labels(val)?;
    let val_targets: Vec<f64> = val_labels.iter().map(|l| l.target()).collect();
    stack.stage = stage;
    let mut adam = Adam::new(cfg.adam());
    let mut record = RunRecord::new(stage, ctx.config_hash);
    let mut best: Option<(EpochRecord, EncoderStack)> = None;
    let mut start = 0;

    if let Some(r) = load_resume(ctx, stage)? {
        stack = r.checkpoint.stack;
        adam.state = r.checkpoint.optimizer.unwrap_or_default();
        start = r.checkpoint.epoch;
        if !r.records.is_empty() {
            let run = ctx.run.expect("resume implies a run directory");
            let e = select_best(&r.records, SelectionRule::AccuracyThenLoss)?;
            let ck = Checkpoint::load(&run.checkpoint_path("best.ckpt"))?;
            best = Some((r.records[e - 1].clone(), ck.stack));
        }
        record.epochs = r.records;
    } else if let Some(run) = ctx.run {
        run.reset_metrics(&[])?;
    }

    for epoch in start + 1..=cfg.epochs {
        let mut rng = epoch_rng(ctx.seed, stage, epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut grad_norm = 0.0;
        for idx in batches(train.len(), cfg.batch_size, &mut rng) {
            let batch = Batch::new(&pick(train, &idx), &stack.config)?;
            let labels: Vec<Sentiment> = idx.iter().map(|&i| train_labels[i]).collect();
            let pass = classifier_loss_and_grad(&mut stack, &batch, &labels, &mut Mode::Train(&mut rng))?;
            grad_norm = adam.step(&mut stack, &pass.grad, &is_classifier_param, cfg.clip_norm);
            loss_sum += pass.loss * idx.len() as f64;
            correct += pass
                .logits
                .iter()
                .zip(&labels)
                .filter(|(&l, &y)| predict_class(l) == y)
                .count();
        }
        let logits = predict_logits(&mut stack, val)?;
        let (val_loss, _) = bce_with_logits(&logits, &val_targets)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss became {val_loss} at epoch {epoch}")));
        }
        let pred: Vec<Sentiment> = logits.iter().map(|&l| predict_class(l)).collect();
        let conf = Confusion::from_predictions(&pred, &val_labels)?;
        let rec = EpochRecord {
            train_accuracy: Some(correct as f64 / train.len() as f64),
            val_accuracy: Some(conf.accuracy()),
            val_f1: Some(conf.f1()),
            grad_norm: Some(grad_norm),
            ..EpochRecord::new(epoch, loss_sum / train.len() as f64, val_loss)
        };
        info!(
            "{stage} epoch {epoch}/{}: train loss {:.4}, val loss {:.4}, val acc {:.4}",
            cfg.epochs,
            rec.train_loss,
            rec.val_loss,
            conf.accuracy()
        );
        let improved = best.as_ref().is_none_or(|(b, _)| better(&rec, b));
        if improved {
            best = Some((rec.clone(), stack.clone()));
        }
        record.epochs.push(rec.clone());
        if let Some(run) = ctx.run {
            run.append_metrics(&rec)?;
            let mut ck = Checkpoint::new(stack.clone());
            ck.epoch = epoch;
            if improved {
                let p = run.save_checkpoint(&ck, "best.ckpt")?;
                run.set_pointer(&p)?;
            }
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                run.save_checkpoint(&ck, &format!("epoch-{epoch:04}-{stage}.ckpt"))?;
            }
            ck.optimizer = Some(adam.state.clone());
            run.save_resume(&ck)?;
        }
    }

    let (best_rec, best_stack) =
        best.ok_or_else(|| Error::State(format!("{stage} ran no epochs")))?;
    record.selected_epoch = Some(best_rec.epoch);
    finish(ctx.run, &mut record, started)?;
    Ok(StageOutput {
        stack: best_stack,
        cluster: None,
        record,
        initial_purity: None,
    })
}

/// Supervised baseline: a randomly initialized classifier trained on the
/// labeled pool; returns the selected epoch's model.
pub fn train_baseline(
    split: &CorpusSplit,
    model: &EncoderStackConfig,
    cfg: &TrainConfig,
    ctx: &StageContext,
) -> Result<StageOutput> {
    if split.train_labeled.is_empty() {
        return Err(Error::Data("the labeled training pool is empty".into()));
    }
    let stack = EncoderStack::new(model.clone(), ctx.seed)?;
    let train: Vec<&MultimodalSample> = split.train_labeled.iter().collect();
    let val: Vec<&MultimodalSample> = split.val_labeled.iter().collect();
    train_classifier(stack, &train, &val, cfg, StageTag::Baseline, ctx)
}

/// Evaluation chunk bounds; a trailing single row joins the previous chunk.
fn eval_chunks(n: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(EVAL_BATCH)
        .map(|s| (s, (s + EVAL_BATCH).min(n)))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s == 1) {
        let (_, e) = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").1 = e;
    }
    out
}

/// Weighted mean of the composite terms over `samples`, in eval mode.
fn composite_eval(
    stack: &EncoderStack,
    samples: &[&MultimodalSample],
    weights: &LossWeights,
    cluster: Option<(&ClusterState, &Array2<f64>)>,
    labels: &[Option<Sentiment>],
) -> Result<(f64, LossTerms)> {
    let mut total = 0.0;
    let mut terms = LossTerms::default();
    let n = samples.len() as f64;
    for (s, e) in eval_chunks(samples.len()) {
        let batch = Batch::new(&samples[s..e], &stack.config)?;
        let p = cluster.map(|(_, p)| p.slice(ndarray::s![s..e, ..]).to_owned());
        let targets = cluster.zip(p.as_ref()).map(|((state, _), p)| ClusterTargets { state, p });
        let mut w = *weights;
        if e - s < 2 {
            w.gamma = 0.0;
        }
        let pass = composite_loss_and_grad(stack, &batch, &w, targets, &labels[s..e], &mut Mode::Eval)?;
        let m = (e - s) as f64 / n;
        total += pass.total * m;
        terms.recon += pass.terms.recon * m;
        terms.disentangle += pass.terms.disentangle * m;
        terms.cluster += pass.terms.cluster * m;
        terms.supervised += pass.terms.supervised * m;
    }
    Ok((total, terms))
}

/// Stage A: trains encoders, latent projection and decoders on every
/// training sample, labeled or not, with `alpha·recon + gamma·disentangle`.
pub fn pretrain_autoencoder(
    split: &CorpusSplit,
    model: &EncoderStackConfig,
    cfg: &AutoencoderConfig,
    ctx: &StageContext,
) -> Result<StageOutput> {
    let errs = cfg.validate("pretrain_ae");
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let train_owned = split.train_all();
    let val_owned = split.val_all();
    let train: Vec<&MultimodalSample> = train_owned.iter().collect();
    let val: Vec<&MultimodalSample> = val_owned.iter().collect();
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Data("autoencoder pretraining needs at least 2 training and 1 validation samples".into()));
    }
    let started = Instant::now();
    let stage = StageTag::Autoencoder;
    let weights = cfg.weights();
    let tc = &cfg.train;
    let mut stack = EncoderStack::new(model.clone(), ctx.seed)?;
    stack.stage = stage;
    let mut adam = Adam::new(tc.adam());
    let mut record = RunRecord::new(stage, ctx.config_hash);
    let mut start = 0;
    if let Some(r) = load_resume(ctx, stage)? {
        stack = r.checkpoint.stack;
        adam.state = r.checkpoint.optimizer.unwrap_or_default();
        start = r.checkpoint.epoch;
        record.epochs = r.records;
    } else if let Some(run) = ctx.run {
        run.reset_metrics(&[])?;
    }
    let none_train = vec![None; train.len()];
    let none_val = vec![None; val.len()];

    for epoch in start + 1..=tc.epochs {
        let mut rng = epoch_rng(ctx.seed, stage, epoch);
        let mut sum = 0.0;
        let mut terms = LossTerms::default();
        let mut grad_norm = 0.0;
        for idx in batches(train.len(), tc.batch_size, &mut rng) {
            let batch = Batch::new(&pick(&train, &idx), &stack.config)?;
            let pass = composite_loss_and_grad(
                &stack,
                &batch,
                &weights,
                None,
                &none_train[..idx.len()],
                &mut Mode::Train(&mut rng),
            )?;
            grad_norm = adam.step(&mut stack, &pass.grad, &is_autoencoder_param, tc.clip_norm);
            let m = idx.len() as f64;
            sum += pass.total * m;
            terms.recon += pass.terms.recon * m;
            terms.disentangle += pass.terms.disentangle * m;
        }
        let n = train.len() as f64;
        let (val_loss, _) = composite_eval(&stack, &val, &weights, None, &none_val)?;
        let rec = EpochRecord {
            recon: Some(terms.recon / n),
            disentangle: Some(terms.disentangle / n),
            grad_norm: Some(grad_norm),
            ..EpochRecord::new(epoch, sum / n, val_loss)
        };
        info!(
            "{stage} epoch {epoch}/{}: loss {:.4} (recon {:.4}), val loss {:.4}",
            tc.epochs,
            rec.train_loss,
            terms.recon / n,
            val_loss
        );
        record.epochs.push(rec.clone());
        save_pretrain_epoch(ctx.run, &stack, None, &adam, epoch, tc, &rec)?;
    }
    record.selected_epoch = Some(select_best(&record.epochs, SelectionRule::Last)?);
    if let Some(run) = ctx.run {
        let mut ck = Checkpoint::new(stack.clone());
        ck.epoch = tc.epochs;
        let p = run.save_checkpoint(&ck, "final.ckpt")?;
        run.set_pointer(&p)?;
    }
    finish(ctx.run, &mut record, started)?;
    Ok(StageOutput {
        stack,
        cluster: None,
        record,
        initial_purity: None,
    })
}

fn save_pretrain_epoch(
    run: Option<&RunDir>,
    stack: &EncoderStack,
    cluster: Option<&ClusterState>,
    adam: &Adam,
    epoch: usize,
    cfg: &TrainConfig,
    rec: &EpochRecord,
) -> Result<()> {
    let Some(run) = run else { return Ok(()) };
    run.append_metrics(rec)?;
    let mut ck = Checkpoint::new(stack.clone());
    ck.cluster = cluster.cloned();
    ck.epoch = epoch;
    if cfg.checkpoint_every > 0 && epoch.is_multiple_of(cfg.checkpoint_every) {
        run.save_checkpoint(&ck, &format!("epoch-{epoch:04}-{}.ckpt", stack.stage))?;
    }
    ck.optimizer = Some(adam.state.clone());
    run.save_resume(&ck)
}

/// The stack and the centroids as one parameter set for the optimizer.
#[derive(Debug, Clone)]
struct DecModel {
    stack: EncoderStack,
    cluster: ClusterState,
}

impl Params for DecModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.stack.visit(prefix, f);
        self.cluster.visit(&join(prefix, "cluster"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.stack.visit_mut(prefix, f);
        self.cluster.visit_mut(&join(prefix, "cluster"), f);
    }
}

fn dec_trainable(name: &str) -> bool {
    is_autoencoder_param(name) || name == "cluster.centroids"
}

/// Q over `samples`, re-seeding any centroid that lost all its mass.
fn refresh_assignments(
    stack: &EncoderStack,
    cluster: &mut ClusterState,
    samples: &[&MultimodalSample],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let z = latents_of(stack, samples)?;
    let mut q = soft_assign(&z, cluster)?;
    let moved = reseed_degenerate(cluster, &z, &q);
    if !moved.is_empty() {
        warn!("re-seeded degenerate clusters {moved:?}");
        q = soft_assign(&z, cluster)?;
    }
    Ok((z, q))
}

/// Stage B: initializes centroids on the stage-A latents, then trains the
/// autoencoder and centroids on `KL(P‖Q) + α·recon + β·supervised + γ·dis`.
/// P is recomputed from the whole training set at the start of each epoch.
pub fn pretrain_dec(
    ae: &Checkpoint,
    split: &CorpusSplit,
    cfg: &DecConfig,
    ctx: &StageContext,
) -> Result<StageOutput> {
    let errs = cfg.validate("pretrain_dec");
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if ae.stage() != StageTag::Autoencoder {
        return Err(Error::Checkpoint(format!(
            "clustering needs an autoencoder checkpoint, got stage {}",
            ae.stage()
        )));
    }
    let train_owned = split.train_all();
    let val_owned = split.val_all();
    let train: Vec<&MultimodalSample> = train_owned.iter().collect();
    let val: Vec<&MultimodalSample> = val_owned.iter().collect();
    if train.len() < cfg.clusters.max(2) || val.is_empty() {
        return Err(Error::Data(format!(
            "clustering needs at least {} training samples and 1 validation sample",
            cfg.clusters.max(2)
        )));
    }
    let started = Instant::now();
    let stage = StageTag::Dec;
    let tc = &cfg.train;
    let weights = cfg.weights();
    let labels: Vec<Option<Sentiment>> = train.iter().map(|s| s.binary_label()).collect();
    for (s, l) in train.iter().zip(&labels) {
        assert_eq!(l.is_some(), s.is_labeled, "label mask out of sync for {}", s.sample_id);
    }
    let truth: Vec<Option<Sentiment>> = train.iter().map(|s| s.true_label()).collect();
    let val_labels: Vec<Option<Sentiment>> = val.iter().map(|s| s.binary_label()).collect();

    let mut stack = ae.stack.clone();
    stack.stage = stage;
    let z0 = latents_of(&stack, &train)?;
    let mut cluster = init_centroids(&z0, cfg.clusters, ctx.seed, &labels, cfg.t_dof)?;
    let initial_purity = cluster_purity(&argmax_rows(&soft_assign(&z0, &cluster)?), &truth, cluster.k());
    info!("{stage}: centroids initialized, purity {initial_purity:.4}");

    let mut adam = Adam::new(tc.adam());
    let mut record = RunRecord::new(stage, ctx.config_hash);
    let mut start = 0;
    if let Some(r) = load_resume(ctx, stage)? {
        stack = r.checkpoint.stack;
        cluster = r
            .checkpoint
            .cluster
            .ok_or_else(|| Error::Checkpoint("resume checkpoint has no cluster state".into()))?;
        adam.state = r.checkpoint.optimizer.unwrap_or_default();
        start = r.checkpoint.epoch;
        record.epochs = r.records;
    } else if let Some(run) = ctx.run {
        run.reset_metrics(&[])?;
    }
    let mut model = DecModel { stack, cluster };
    let (_, mut q_all) = refresh_assignments(&model.stack, &mut model.cluster, &train)?;

    for epoch in start + 1..=tc.epochs {
        let p_all = target_distribution(&q_all)?;
        let mut rng = epoch_rng(ctx.seed, stage, epoch);
        let mut sum = 0.0;
        let mut terms = LossTerms::default();
        let mut grad_norm = 0.0;
        for idx in batches(train.len(), tc.batch_size, &mut rng) {
            let batch = Batch::new(&pick(&train, &idx), &model.stack.config)?;
            let p = rows(&p_all, &idx);
            let batch_labels: Vec<Option<Sentiment>> = idx.iter().map(|&i| labels[i]).collect();
            let pass = composite_loss_and_grad(
                &model.stack,
                &batch,
                &weights,
                Some(ClusterTargets {
                    state: &model.cluster,
                    p: &p,
                }),
                &batch_labels,
                &mut Mode::Train(&mut rng),
            )?;
            let grad = DecModel {
                stack: pass.grad,
                cluster: pass.cluster_grad.expect("cluster gradient"),
            };
            grad_norm = adam.step(&mut model, &grad, &dec_trainable, tc.clip_norm);
            let m = idx.len() as f64;
            sum += pass.total * m;
            terms.cluster += pass.terms.cluster * m;
            terms.recon += pass.terms.recon * m;
            terms.supervised += pass.terms.supervised * m;
            terms.disentangle += pass.terms.disentangle * m;
        }
        let n = train.len() as f64;
        q_all = refresh_assignments(&model.stack, &mut model.cluster, &train)?.1;
        let purity = cluster_purity(&argmax_rows(&q_all), &truth, model.cluster.k());

        let z_val = latents_of(&model.stack, &val)?;
        let q_val = soft_assign(&z_val, &model.cluster)?;
        let p_val = target_distribution(&q_val).unwrap_or_else(|_| q_val.clone());
        let (val_loss, _) = composite_eval(
            &model.stack,
            &val,
            &weights,
            Some((&model.cluster, &p_val)),
            &val_labels,
        )?;
        let (val_acc, val_f1) = cluster_accuracy(&q_val, &model.cluster, &val_labels)?;
        let rec = EpochRecord {
            val_accuracy: val_acc,
            val_f1,
            recon: Some(terms.recon / n),
            disentangle: Some(terms.disentangle / n),
            cluster: Some(terms.cluster / n),
            supervised: Some(terms.supervised / n),
            purity: Some(purity),
            grad_norm: Some(grad_norm),
            ..EpochRecord::new(epoch, sum / n, val_loss)
        };
        info!(
            "{stage} epoch {epoch}/{}: loss {:.4}, purity {purity:.4}, val loss {val_loss:.4}",
            tc.epochs, rec.train_loss
        );
        record.epochs.push(rec.clone());
        save_pretrain_epoch(ctx.run, &model.stack, Some(&model.cluster), &adam, epoch, tc, &rec)?;
    }
    record.selected_epoch = Some(select_best(&record.epochs, SelectionRule::Last)?);
    if let Some(run) = ctx.run {
        let mut ck = Checkpoint::new(model.stack.clone());
        ck.cluster = Some(model.cluster.clone());
        ck.epoch = tc.epochs;
        let p = run.save_checkpoint(&ck, "final.ckpt")?;
        run.set_pointer(&p)?;
    }
    finish(ctx.run, &mut record, started)?;
    Ok(StageOutput {
        stack: model.stack,
        cluster: Some(model.cluster),
        record,
        initial_purity: Some(initial_purity),
    })
}

/// Accuracy and F1 of the cluster-mapped class on rows with a label.
fn cluster_accuracy(
    q: &Array2<f64>,
    cluster: &ClusterState,
    labels: &[Option<Sentiment>],
) -> Result<(Option<f64>, Option<f64>)> {
    let probs = class_probabilities(q, cluster.class_mapping()?)?;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            let p: Array1<f64> = probs.row(i).to_owned();
            pred.push(if p[Sentiment::Positive.index()] > p[Sentiment::Negative.index()] {
                Sentiment::Positive
            } else {
                Sentiment::Negative
            });
            truth.push(*l);
        }
    }
    if truth.is_empty() {
        return Ok((None, None));
    }
    let c = Confusion::from_predictions(&pred, &truth)?;
    Ok((Some(c.accuracy()), Some(c.f1())))
}

/// A fresh classifier (seeded by `seed`) carrying the encoder groups of
/// `source`; every other group keeps its fresh initialization.
pub fn transfer_encoders(source: &EncoderStack, seed: u64) -> Result<EncoderStack> {
    let mut fresh = EncoderStack::new(source.config.clone(), seed)?;
    fresh.copy_groups_from(source, &ENCODER_GROUPS)?;
    Ok(fresh)
}

/// Copies the clustering stage's encoders into a fresh classifier and trains
/// it with the baseline recipe.
pub fn transfer_and_finetune(
    dec: &Checkpoint,
    split: &CorpusSplit,
    cfg: &FinetuneConfig,
    ctx: &StageContext,
) -> Result<StageOutput> {
    if dec.stage() != StageTag::Dec && !cfg.allow_any_stage {
        return Err(Error::Checkpoint(format!(
            "fine-tuning expects a clustering checkpoint, got stage {} (set finetune.allow_any_stage to override)",
            dec.stage()
        )));
    }
    let stack = transfer_encoders(&dec.stack, ctx.seed)?;
    match cfg.mode {
        FinetuneMode::LabeledOnly => {
            let train: Vec<&MultimodalSample> = split.train_labeled.iter().collect();
            let val: Vec<&MultimodalSample> = split.val_labeled.iter().collect();
            train_classifier(stack, &train, &val, &cfg.train, StageTag::Finetuned, ctx)
        }
        FinetuneMode::Full => {
            let train_owned = unmask(&split.train_all());
            let val_owned = unmask(&split.val_all());
            let train: Vec<&MultimodalSample> = train_owned.iter().collect();
            let val: Vec<&MultimodalSample> = val_owned.iter().collect();
            train_classifier(stack, &train, &val, &cfg.train, StageTag::Finetuned, ctx)
        }
    }
}

/// Samples with a polar label, with their labels made visible.
pub fn unmask(samples: &[MultimodalSample]) -> Vec<MultimodalSample> {
    samples
        .iter()
        .filter(|s| s.true_label().is_some())
        .map(|s| MultimodalSample {
            is_labeled: true,
            ..s.clone()
        })
        .collect()
}
