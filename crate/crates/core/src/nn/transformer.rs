use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::{
    dropout_mask, join, relu, relu_backward, AttentionCache, LayerNorm, LayerNormCache, Linear,
    Mode, MultiHeadAttention, Params,
};

/// Fixed sinusoidal position table `[len × d]`.
pub fn sinusoidal_encoding(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(t, j)| {
        let pair = (j / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Post-norm transformer encoder block:
/// `h = LN(x + drop(attn(x)))`, `y = LN(h + drop(W2·relu(W1·h)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerCache {
    attn: AttentionCache,
    drop1: Option<Array2<f64>>,
    norm1: LayerNormCache,
    h: Array2<f64>,
    f1: Array2<f64>,
    u: Array2<f64>,
    drop2: Option<Array2<f64>>,
    norm2: LayerNormCache,
}

impl EncoderLayer {
    pub fn new(d_model: usize, heads: usize, ff_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayer {
            attention: MultiHeadAttention::new(d_model, heads, rng),
            norm1: LayerNorm::new(d_model),
            ff1: Linear::new(d_model, ff_dim, true, rng),
            ff2: Linear::new(ff_dim, d_model, true, rng),
            norm2: LayerNorm::new(d_model),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        seq_len: usize,
        lens: &[usize],
        dropout: f64,
        mode: &mut Mode,
    ) -> (Array2<f64>, EncoderLayerCache) {
        let (mut a, attn) = self.attention.forward(x, seq_len, lens);
        let drop1 = dropout_mask(a.dim(), dropout, mode);
        if let Some(m) = &drop1 {
            a *= m;
        }
        let (h, norm1) = self.norm1.forward(&(x + &a));
        let f1 = self.ff1.forward(&h);
        let u = relu(&f1);
        let mut f2 = self.ff2.forward(&u);
        let drop2 = dropout_mask(f2.dim(), dropout, mode);
        if let Some(m) = &drop2 {
            f2 *= m;
        }
        let (y, norm2) = self.norm2.forward(&(&h + &f2));
        (
            y,
            EncoderLayerCache {
                attn,
                drop1,
                norm1,
                h,
                f1,
                u,
                drop2,
                norm2,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &EncoderLayerCache,
        dy: &Array2<f64>,
        seq_len: usize,
        lens: &[usize],
        grad: &mut EncoderLayer,
    ) -> Array2<f64> {
        let dr2 = self.norm2.backward(&cache.norm2, dy, &mut grad.norm2);
        let mut df2 = dr2.clone();
        if let Some(m) = &cache.drop2 {
            df2 *= m;
        }
        let mut du = self.ff2.backward(&cache.u, &df2, &mut grad.ff2);
        relu_backward(&cache.f1, &mut du);
        let dh = dr2 + &self.ff1.backward(&cache.h, &du, &mut grad.ff1);
        let dr1 = self.norm1.backward(&cache.norm1, &dh, &mut grad.norm1);
        let mut da = dr1.clone();
        if let Some(m) = &cache.drop1 {
            da *= m;
        }
        dr1 + &self
            .attention
            .backward(&cache.attn, &da, seq_len, lens, &mut grad.attention)
    }
}

impl Params for EncoderLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.attention.visit(&join(prefix, "attention"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
    }
}
