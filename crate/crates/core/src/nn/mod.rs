//! Hand-written layers with explicit forward caches and backward passes.
//!
//! Every layer stores its gradients in a value of its own type, so
//! `layer.zeros_like()` is the gradient accumulator for `layer`.

mod adam;
mod attention;
mod linear;
mod norm;
mod transformer;

pub use adam::{Adam, AdamConfig, AdamState, Moments};
pub use attention::{AttentionCache, MultiHeadAttention};
pub use linear::{Linear, Mlp, MlpCache};
pub use norm::{BatchNorm, BatchNormCache, LayerNorm, LayerNormCache};
pub use transformer::{sinusoidal_encoding, EncoderLayer, EncoderLayerCache};

use ndarray::{Array, Array2, Dimension};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Forward-pass mode. Training mode owns the dropout RNG.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Visitor over named trainable tensors, in a fixed order.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, d| n += d.len());
        n
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut out = self.clone();
        out.visit_mut("", &mut |_, _, d| d.fill(0.0));
        out
    }

    /// Flattens every tensor into one vector in visit order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, d| out.extend_from_slice(d));
        out
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_array<D: Dimension>(
    prefix: &str,
    name: &str,
    a: &Array<f64, D>,
    f: &mut dyn FnMut(&str, &[usize], &[f64]),
) {
    f(
        &join(prefix, name),
        a.shape(),
        a.as_slice().expect("parameters are contiguous"),
    );
}

pub(crate) fn visit_array_mut<D: Dimension>(
    prefix: &str,
    name: &str,
    a: &mut Array<f64, D>,
    f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
) {
    let shape = a.shape().to_vec();
    f(
        &join(prefix, name),
        &shape,
        a.as_slice_mut().expect("parameters are contiguous"),
    );
}

/// Inverted dropout mask: entries are 0 with probability `p`, else `1/(1-p)`.
/// Returns `None` in eval mode or when `p == 0`.
pub fn dropout_mask(shape: (usize, usize), p: f64, mode: &mut Mode) -> Option<Array2<f64>> {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            Some(Array2::from_shape_fn(shape, |_| {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            }))
        }
        _ => None,
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Zeroes `grad` where the pre-activation was not positive.
pub fn relu_backward(pre: &Array2<f64>, grad: &mut Array2<f64>) {
    ndarray::Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Uniform initialization in `[-bound, bound]`.
pub fn uniform<D: Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(
    shape: Sh,
    bound: f64,
    rng: &mut ChaCha8Rng,
) -> Array<f64, D> {
    Array::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}
