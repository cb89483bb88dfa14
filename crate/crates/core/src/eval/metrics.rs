use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::data::{MultimodalSample, Sentiment};
use crate::error::{Error, Result};
use crate::model::{Batch, EncoderStack};

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

/// Binary confusion counts with positive as the reference class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(pred: &[Sentiment], truth: &[Sentiment]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (p, t) in pred.iter().zip(truth) {
            match (p, t) {
                (Sentiment::Positive, Sentiment::Positive) => c.tp += 1,
                (Sentiment::Positive, Sentiment::Negative) => c.fp += 1,
                (Sentiment::Negative, Sentiment::Negative) => c.tn += 1,
                (Sentiment::Negative, Sentiment::Positive) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Positive-class F1; 0 when there are no positive predictions or labels.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// F1 of the negative class.
    pub fn negative_f1(&self) -> f64 {
        ratio(2 * self.tn, 2 * self.tn + self.fn_ + self.fp)
    }

    pub fn macro_f1(&self) -> f64 {
        (self.f1() + self.negative_f1()) / 2.0
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Classification metrics of one model on one labeled sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub confusion: Confusion,
    pub samples: usize,
    /// Stage tag and checkpoint of the evaluated model.
    pub provenance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_fraction: Option<f64>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, provenance: impl Into<String>) -> Self {
        EvalReport {
            accuracy: confusion.accuracy(),
            f1: confusion.f1(),
            macro_f1: confusion.macro_f1(),
            confusion,
            samples: confusion.total(),
            provenance: provenance.into(),
            label_fraction: None,
        }
    }
}

/// Threshold at logit 0: positive iff the logit is strictly positive.
pub fn predict_class(logit: f64) -> Sentiment {
    if logit > 0.0 {
        Sentiment::Positive
    } else {
        Sentiment::Negative
    }
}

/// Eval-mode logits for every sample, batched.
pub fn predict_logits(stack: &mut EncoderStack, samples: &[&MultimodalSample]) -> Result<Array1<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let batch = Batch::new(chunk, &stack.config)?;
        out.extend(stack.predict_logits(&batch)?);
    }
    Ok(Array1::from(out))
}

/// Visible labels of `samples`; every sample must carry one.
pub fn visible_labels(samples: &[&MultimodalSample]) -> Result<Vec<Sentiment>> {
    samples
        .iter()
        .map(|s| {
            s.binary_label().ok_or_else(|| Error::InvalidSample {
                sample_id: s.sample_id.clone(),
                reason: "evaluation needs a visible binary label".into(),
            })
        })
        .collect()
}

/// Accuracy and F1 of `stack` on labeled `samples`. Does not modify the model.
pub fn evaluate(stack: &EncoderStack, samples: &[&MultimodalSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty sample set".into()));
    }
    let truth = visible_labels(samples)?;
    let mut model = stack.clone();
    let logits = predict_logits(&mut model, samples)?;
    let pred: Vec<Sentiment> = logits.iter().map(|&l| predict_class(l)).collect();
    let confusion = Confusion::from_predictions(&pred, &truth)?;
    Ok(EvalReport::from_confusion(confusion, stack.stage.as_str()))
}
