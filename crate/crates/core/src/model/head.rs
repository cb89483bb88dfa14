use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{
    dropout_mask, join, relu, relu_backward, BatchNorm, BatchNormCache, Linear, Mode, Params,
};

/// `FC → BatchNorm → ReLU → Dropout`, then `FC → ReLU` per remaining width,
/// then a final `FC` to one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub fc: Linear,
    pub bn: BatchNorm,
    pub hidden: Vec<Linear>,
    pub out: Linear,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    x: Array2<f64>,
    bn: BatchNormCache,
    bn_out: Array2<f64>,
    mask: Option<Array2<f64>>,
    hidden_in: Vec<Array2<f64>>,
    hidden_pre: Vec<Array2<f64>>,
    out_in: Array2<f64>,
}

impl ClassifierHead {
    pub fn new(input: usize, widths: &[usize], dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let fc = Linear::new(input, widths[0], true, rng);
        let bn = BatchNorm::new(widths[0]);
        let hidden = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], true, rng))
            .collect();
        let out = Linear::new(*widths.last().expect("non-empty widths"), 1, true, rng);
        ClassifierHead {
            fc,
            bn,
            hidden,
            out,
            dropout,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: &mut Mode) -> Result<(Array1<f64>, HeadCache)> {
        let z0 = self.fc.forward(x);
        let (bn_out, bn) = self.bn.forward(&z0, mode.is_train())?;
        let mut h = relu(&bn_out);
        let mask = dropout_mask(h.dim(), self.dropout, mode);
        if let Some(m) = &mask {
            h *= m;
        }
        let mut hidden_in = Vec::with_capacity(self.hidden.len());
        let mut hidden_pre = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let pre = layer.forward(&h);
            hidden_in.push(h);
            h = relu(&pre);
            hidden_pre.push(pre);
        }
        let logits = self.out.forward(&h).index_axis_move(Axis(1), 0);
        Ok((
            logits,
            HeadCache {
                x: x.clone(),
                bn,
                bn_out,
                mask,
                hidden_in,
                hidden_pre,
                out_in: h,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &HeadCache,
        dlogits: &Array1<f64>,
        grad: &mut ClassifierHead,
    ) -> Array2<f64> {
        let dy = dlogits.view().insert_axis(Axis(1)).to_owned();
        let mut g = self.out.backward(&cache.out_in, &dy, &mut grad.out);
        for i in (0..self.hidden.len()).rev() {
            relu_backward(&cache.hidden_pre[i], &mut g);
            g = self.hidden[i].backward(&cache.hidden_in[i], &g, &mut grad.hidden[i]);
        }
        if let Some(m) = &cache.mask {
            g *= m;
        }
        relu_backward(&cache.bn_out, &mut g);
        let g = self.bn.backward(&cache.bn, &g, &mut grad.bn);
        self.fc.backward(&cache.x, &g, &mut grad.fc)
    }

    /// Non-trainable batch-norm state, for checkpoints.
    pub fn buffers(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![
            ("bn.running_mean", self.bn.running_mean.to_vec()),
            ("bn.running_var", self.bn.running_var.to_vec()),
            ("bn.batches_seen", vec![self.bn.batches_seen as f64]),
        ]
    }
}

impl Params for ClassifierHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.fc.visit(&join(prefix, "fc"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        for (i, l) in self.hidden.iter().enumerate() {
            l.visit(&join(prefix, &format!("hidden.{i}")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.fc.visit_mut(&join(prefix, "fc"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
        for (i, l) in self.hidden.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("hidden.{i}")), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
