use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;

use crate::nn::{join, sinusoidal_encoding, EncoderLayer, EncoderLayerCache, Linear, Mode, Params};

/// Per-modality transformer encoder: input projection, sinusoidal positions,
/// encoder blocks, then a mean over the valid time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEncoder {
    pub input: Linear,
    pub layers: Vec<EncoderLayer>,
    positions: Option<Array2<f64>>,
    dropout: f64,
}

#[derive(Debug, Clone)]
pub struct ModalityCache {
    x: Array2<f64>,
    layers: Vec<EncoderLayerCache>,
}

#[allow(clippy::too_many_arguments)]
impl ModalityEncoder {
    pub fn new(
        input_dim: usize,
        seq_len: usize,
        d_model: usize,
        heads: usize,
        layers: usize,
        ff_dim: usize,
        dropout: f64,
        positional: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input = Linear::new(input_dim, d_model, true, rng);
        let layers = (0..layers)
            .map(|_| EncoderLayer::new(d_model, heads, ff_dim, rng))
            .collect();
        ModalityEncoder {
            input,
            layers,
            positions: positional.then(|| sinusoidal_encoding(seq_len, d_model)),
            dropout,
        }
    }

    /// `x` stacks `B` sequences of `seq_len` rows; returns `[B × d_model]`.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        seq_len: usize,
        lens: &[usize],
        mode: &mut Mode,
    ) -> (Array2<f64>, ModalityCache) {
        let mut h = self.input.forward(x);
        if let Some(pe) = &self.positions {
            for b in 0..lens.len() {
                let mut block = h.slice_mut(s![b * seq_len..(b + 1) * seq_len, ..]);
                block += pe;
            }
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&h, seq_len, lens, self.dropout, mode);
            caches.push(c);
            h = y;
        }
        let d = h.ncols();
        let mut pooled = Array2::zeros((lens.len(), d));
        for (b, &len) in lens.iter().enumerate() {
            let valid = h.slice(s![b * seq_len..b * seq_len + len, ..]);
            pooled
                .row_mut(b)
                .assign(&(valid.sum_axis(ndarray::Axis(0)) / len as f64));
        }
        (
            pooled,
            ModalityCache {
                x: x.clone(),
                layers: caches,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &ModalityCache,
        dpooled: &Array2<f64>,
        seq_len: usize,
        lens: &[usize],
        grad: &mut ModalityEncoder,
    ) {
        let d = dpooled.ncols();
        let mut dh = Array2::zeros((lens.len() * seq_len, d));
        for (b, &len) in lens.iter().enumerate() {
            let g = &dpooled.row(b) / len as f64;
            for t in 0..len {
                dh.row_mut(b * seq_len + t).assign(&g);
            }
        }
        for (layer, (c, gl)) in self
            .layers
            .iter()
            .zip(cache.layers.iter().zip(grad.layers.iter_mut()))
            .rev()
        {
            dh = layer.backward(c, &dh, seq_len, lens, gl);
        }
        self.input.backward_params(&cache.x, &dh, &mut grad.input);
    }
}

impl Params for ModalityEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.input.visit(&join(prefix, "input"), f);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layers.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.input.visit_mut(&join(prefix, "input"), f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
    }
}
