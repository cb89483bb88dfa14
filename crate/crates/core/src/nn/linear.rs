use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{relu, relu_backward, uniform, visit_array, visit_array_mut, Params};

/// Affine map `y = x·W + b` with `W` stored `[in × out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Linear {
    pub fn new(input: usize, output: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = uniform((input, output), bound, rng);
        let bias = bias.then(|| uniform(output, bound, rng));
        Linear { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        self.backward_params(x, dy, grad);
        dy.dot(&self.weight.t())
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn backward_params(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) {
        ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.weight);
        if let Some(gb) = &mut grad.bias {
            *gb += &dy.sum_axis(Axis(0));
        }
    }
}

impl Params for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_array(prefix, "weight", &self.weight, f);
        if let Some(b) = &self.bias {
            visit_array(prefix, "bias", b, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_array_mut(prefix, "weight", &mut self.weight, f);
        if let Some(b) = &mut self.bias {
            visit_array_mut(prefix, "bias", b, f);
        }
    }
}

/// Stack of linear layers with ReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `widths` lists every layer size including input and output.
    pub fn new(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], true, rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            h = if i < last { relu(&z) } else { z.clone() };
            pre.push(z);
        }
        (h, MlpCache { inputs, pre })
    }

    pub fn backward(&self, cache: &MlpCache, dy: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut g = dy.clone();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                relu_backward(&cache.pre[i], &mut g);
            }
            g = self.layers[i].backward(&cache.inputs[i], &g, &mut grad.layers[i]);
        }
        g
    }
}

impl Params for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&super::join(prefix, &format!("layers.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&super::join(prefix, &format!("layers.{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn bias_free_count_is_in_times_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Linear::new(7, 3, false, &mut rng).num_params(), 21);
        assert_eq!(Linear::new(7, 3, true, &mut rng).num_params(), 24);
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[3, 5, 2], &mut rng);
        let x = uniform((4, 3), 1.0, &mut rng);
        let w = uniform((4, 2), 1.0, &mut rng);
        let loss = |m: &Mlp| (m.forward(&x).0 * &w).sum();
        let (_, cache) = mlp.forward(&x);
        let mut grad = mlp.zeros_like();
        mlp.backward(&cache, &w, &mut grad);
        let analytic = grad.flatten();
        let base = mlp.flatten();
        let h = 1e-5;
        for k in 0..base.len() {
            let mut plus = mlp.clone();
            let mut minus = mlp.clone();
            let mut idx = 0;
            plus.visit_mut("", &mut |_, _, d| {
                for v in d.iter_mut() {
                    if idx == k {
                        *v += h;
                    }
                    idx += 1;
                }
            });
            idx = 0;
            minus.visit_mut("", &mut |_, _, d| {
                for v in d.iter_mut() {
                    if idx == k {
                        *v -= h;
                    }
                    idx += 1;
                }
            });
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-7, "param {k}: {fd} vs {}", analytic[k]);
        }
    }
}
