use ndarray::{s, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{join, Linear, Params};

/// Multi-head scaled dot-product self-attention over a batch of padded
/// sequences stacked as `[B·L × d]`. Keys past each sequence's valid length
/// are masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// `[L × len_b]` attention weights per (sample, head).
    weights: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

impl MultiHeadAttention {
    pub fn new(d_model: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads > 0 && d_model.is_multiple_of(heads), "d_model must be divisible by heads");
        MultiHeadAttention {
            heads,
            query: Linear::new(d_model, d_model, true, rng),
            key: Linear::new(d_model, d_model, true, rng),
            value: Linear::new(d_model, d_model, true, rng),
            output: Linear::new(d_model, d_model, true, rng),
        }
    }

    pub fn forward(&self, x: &Array2<f64>, seq_len: usize, lens: &[usize]) -> (Array2<f64>, AttentionCache) {
        let d = x.ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let mut ctx = Array2::zeros(x.raw_dim());
        let mut weights = Vec::with_capacity(lens.len() * self.heads);
        for (b, &len) in lens.iter().enumerate() {
            let rows = b * seq_len..(b + 1) * seq_len;
            let valid = b * seq_len..b * seq_len + len;
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let qb = q.slice(s![rows.clone(), cols.clone()]);
                let kb = k.slice(s![valid.clone(), cols.clone()]);
                let vb = v.slice(s![valid.clone(), cols.clone()]);
                let mut a = qb.dot(&kb.t()) * scale;
                for mut row in a.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
                ctx.slice_mut(s![rows.clone(), cols]).assign(&a.dot(&vb));
                weights.push(a);
            }
        }
        let y = self.output.forward(&ctx);
        (
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                weights,
                ctx,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &AttentionCache,
        dy: &Array2<f64>,
        seq_len: usize,
        lens: &[usize],
        grad: &mut MultiHeadAttention,
    ) -> Array2<f64> {
        let d = dy.ncols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dctx = self.output.backward(&cache.ctx, dy, &mut grad.output);
        let mut dq = Array2::zeros(dy.raw_dim());
        let mut dk = Array2::zeros(dy.raw_dim());
        let mut dv = Array2::zeros(dy.raw_dim());
        for (b, &len) in lens.iter().enumerate() {
            let rows = b * seq_len..(b + 1) * seq_len;
            let valid = b * seq_len..b * seq_len + len;
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let a = &cache.weights[b * self.heads + h];
                let dc = dctx.slice(s![rows.clone(), cols.clone()]);
                let qb = cache.q.slice(s![rows.clone(), cols.clone()]);
                let kb = cache.k.slice(s![valid.clone(), cols.clone()]);
                let vb = cache.v.slice(s![valid.clone(), cols.clone()]);
                let da = dc.dot(&vb.t());
                dv.slice_mut(s![valid.clone(), cols.clone()])
                    .assign(&a.t().dot(&dc));
                let row_dot = (a * &da).sum_axis(Axis(1));
                let mut ds = &da - &row_dot.insert_axis(Axis(1));
                ds *= a;
                ds *= scale;
                dq.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&ds.dot(&kb));
                dk.slice_mut(s![valid.clone(), cols]).assign(&ds.t().dot(&qb));
            }
        }
        let mut dx = self.query.backward(&cache.x, &dq, &mut grad.query);
        dx += &self.key.backward(&cache.x, &dk, &mut grad.key);
        dx += &self.value.backward(&cache.x, &dv, &mut grad.value);
        dx
    }
}

impl Params for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform;
    use rand::SeedableRng;

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let attn = MultiHeadAttention::new(4, 2, &mut rng);
        let (seq_len, lens) = (3, [3usize, 2]);
        let x = uniform((6, 4), 1.0, &mut rng);
        let w = uniform((6, 4), 1.0, &mut rng);
        let loss = |x: &Array2<f64>| (attn.forward(x, seq_len, &lens).0 * &w).sum();
        let (_, cache) = attn.forward(&x, seq_len, &lens);
        let mut g = attn.zeros_like();
        let dx = attn.backward(&cache, &w, seq_len, &lens, &mut g);
        let h = 1e-6;
        for i in 0..6 {
            for j in 0..4 {
                let mut p = x.clone();
                p[[i, j]] += h;
                let mut m = x.clone();
                m[[i, j]] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() < 1e-7, "({i},{j}) {fd} vs {}", dx[[i, j]]);
            }
        }
    }

    #[test]
    fn padded_keys_do_not_influence_valid_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let attn = MultiHeadAttention::new(4, 2, &mut rng);
        let x = uniform((4, 4), 1.0, &mut rng);
        let mut x2 = x.clone();
        x2.row_mut(3).fill(7.0);
        let a = attn.forward(&x, 4, &[3]).0;
        let b = attn.forward(&x2, 4, &[3]).0;
        assert_eq!(a.slice(s![..3, ..]), b.slice(s![..3, ..]));
    }
}
