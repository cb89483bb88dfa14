//! Forward and backward passes of the training objectives over a whole
//! [`EncoderStack`]: the supervised classifier loss and the composite
//! clustering objective.

use ndarray::{Array1, Array2};

use crate::data::Sentiment;
use crate::dec::{
    class_probabilities, clustering_loss, clustering_loss_grad, combined_loss,
    disentanglement_loss, disentanglement_loss_grad, reconstruction_loss,
    reconstruction_loss_grad, soft_assign, soft_assign_backward, supervised_loss,
    supervised_loss_grad_q, ClusterState, LossTerms, LossWeights,
};
use crate::error::{Error, Result};
use crate::model::{Batch, EncoderStack};
use crate::nn::{Mode, Params};

/// Mean binary cross-entropy on logits and its gradient.
pub fn bce_with_logits(logits: &Array1<f64>, targets: &[f64]) -> Result<(f64, Array1<f64>)> {
    if logits.len() != targets.len() || targets.is_empty() {
        return Err(Error::Shape(format!(
            "{} logits for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(logits.len());
    for (i, (&x, &y)) in logits.iter().zip(targets).enumerate() {
        // max(x,0) − x·y + log(1 + e^−|x|)
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        grad[i] = (sigmoid(x) - y) / n;
    }
    Ok((loss / n, grad))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub struct ClassifierPass {
    pub loss: f64,
    pub logits: Array1<f64>,
    pub grad: EncoderStack,
}

/// BCE of the classifier on a labeled batch, with gradients for every
/// encoder and head parameter. Train mode updates batch-norm statistics.
pub fn classifier_loss_and_grad(
    stack: &mut EncoderStack,
    batch: &Batch,
    labels: &[Sentiment],
    mode: &mut Mode,
) -> Result<ClassifierPass> {
    let targets: Vec<f64> = labels.iter().map(|l| l.target()).collect();
    let (joint, enc_cache) = stack.encode(batch, mode);
    let (logits, head_cache) = stack.classify(&joint, mode)?;
    let (loss, dlogits) = bce_with_logits(&logits, &targets)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("classifier loss became {loss}")));
    }
    let mut grad = stack.zeros_like();
    let djoint = stack.classify_backward(&head_cache, &dlogits, &mut grad);
    stack.encode_backward(batch, &enc_cache, &djoint, &mut grad);
    Ok(ClassifierPass { loss, logits, grad })
}

/// Cluster state and the fixed target rows for the current batch.
pub struct ClusterTargets<'a> {
    pub state: &'a ClusterState,
    pub p: &'a Array2<f64>,
}

pub struct CompositePass {
    pub terms: LossTerms,
    pub total: f64,
    pub grad: EncoderStack,
    pub cluster_grad: Option<ClusterState>,
    /// Soft assignments of the batch, when a cluster state was supplied.
    pub q: Option<Array2<f64>>,
    /// Rows that entered the supervised term.
    pub labeled: usize,
}

/// The composite objective
/// `KL(P‖Q)/B + α·recon + β·supervised + γ·disentangle` on one batch.
///
/// Without `cluster`, the clustering and supervised terms are absent and the
/// objective is the autoencoder loss. The clustering term is averaged over
/// the batch so the weights keep their meaning across batch sizes. `labels`
/// holds `None` for every row without a visible label; only the others feed
/// the supervised term. A term with zero weight contributes no gradient.
pub fn composite_loss_and_grad(
    stack: &EncoderStack,
    batch: &Batch,
    weights: &LossWeights,
    cluster: Option<ClusterTargets>,
    labels: &[Option<Sentiment>],
    mode: &mut Mode,
) -> Result<CompositePass> {
    let b = batch.len();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    let (joint, enc_cache) = stack.encode(batch, mode);
    let z = stack.project_latent(&joint);
    let mut grad = stack.zeros_like();
    let mut terms = LossTerms::default();
    let mut dz = Array2::<f64>::zeros(z.raw_dim());

    let targets = batch.flat_targets();
    let (recon, dec_caches) = stack.decode(&z);
    terms.recon = reconstruction_loss(&targets, &recon)?;
    if weights.alpha > 0.0 {
        let drecon = reconstruction_loss_grad(&targets, &recon)
            .into_iter()
            .map(|g| g * weights.alpha)
            .collect::<Vec<_>>();
        let drecon: [Array2<f64>; 3] = drecon.try_into().expect("three modalities");
        dz += &stack.decode_backward(&dec_caches, &drecon, &mut grad);
    }

    if b >= 2 {
        terms.disentangle = disentanglement_loss(&z)?;
        if weights.gamma > 0.0 {
            dz += &(disentanglement_loss_grad(&z)? * weights.gamma);
        }
    } else if weights.gamma > 0.0 {
        return Err(Error::Shape("disentanglement needs a batch of at least 2".into()));
    }

    let mut cluster_grad = None;
    let mut q_out = None;
    let mut labeled = 0;
    if let Some(ct) = cluster {
        if ct.p.dim() != (b, ct.state.k()) {
            return Err(Error::Shape(format!(
                "target rows {:?} do not match batch {b} × {} clusters",
                ct.p.dim(),
                ct.state.k()
            )));
        }
        let q = soft_assign(&z, ct.state)?;
        terms.cluster = clustering_loss(ct.p, &q)? / b as f64;
        let mut dq = clustering_loss_grad(ct.p, &q) / b as f64;
        let mapping = ct.state.class_mapping()?;
        let probs = class_probabilities(&q, mapping)?;
        let sup = supervised_loss(&probs, labels)?;
        terms.supervised = sup.value;
        labeled = sup.labeled;
        if weights.beta > 0.0 && !sup.no_labels {
            dq += &(supervised_loss_grad_q(&q, mapping, labels)? * weights.beta);
        }
        let (dz_q, dmu) = soft_assign_backward(&z, ct.state, &q, &dq);
        dz += &dz_q;
        let mut g = ct.state.clone();
        g.centroids = dmu;
        cluster_grad = Some(g);
        q_out = Some(q);
    }

    let total = combined_loss(&terms, weights);
    if !total.is_finite() {
        return Err(Error::Numeric(format!("composite loss became {total}")));
    }
    let djoint = stack.project_latent_backward(&joint, &dz, &mut grad);
    stack.encode_backward(batch, &enc_cache, &djoint, &mut grad);
    Ok(CompositePass {
        terms,
        total,
        grad,
        cluster_grad,
        q: q_out,
        labeled,
    })
}
