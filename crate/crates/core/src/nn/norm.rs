use ndarray::{Array1, Array2, Axis, Zip};

use super::{visit_array, visit_array_mut, Params};
use crate::error::{Error, Result};

const EPS: f64 = 1e-5;

/// Row-wise layer normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let mut xhat = x - &mean.view().insert_axis(Axis(1));
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + EPS).sqrt());
        xhat *= &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache,
        dy: &Array2<f64>,
        grad: &mut LayerNorm,
    ) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let d = dy.ncols() as f64;
        let sum_dxhat = dxhat.sum_axis(Axis(1));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1));
        let mut dx = dxhat * d;
        Zip::from(dx.rows_mut())
            .and(cache.xhat.rows())
            .and(&sum_dxhat)
            .and(&sum_dxhat_xhat)
            .and(&cache.inv_std)
            .for_each(|mut row, xh, &s1, &s2, &inv| {
                Zip::from(&mut row).and(&xh).for_each(|v, &x| {
                    *v = (*v - s1 - x * s2) * inv / d;
                });
            });
        dx
    }
}

impl Params for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_array(prefix, "gamma", &self.gamma, f);
        visit_array(prefix, "beta", &self.beta, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_array_mut(prefix, "gamma", &mut self.gamma, f);
        visit_array_mut(prefix, "beta", &mut self.beta, f);
    }
}

/// Batch normalization over the rows of a `[B × F]` batch.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates (momentum 0.1, unbiased running variance); eval mode uses the
/// running estimates and fails until at least one training batch was seen.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub batches_seen: u64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    train: bool,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            batches_seen: 0,
            momentum: 0.1,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Result<(Array2<f64>, BatchNormCache)> {
        let (mean, inv_std) = if train {
            let n = x.nrows();
            if n < 2 {
                return Err(Error::State(
                    "batch normalization needs at least two samples in training mode".into(),
                ));
            }
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = x - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n as f64;
            let m = self.momentum;
            self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
            self.running_var =
                &self.running_var * (1.0 - m) + &var * (m * n as f64 / (n as f64 - 1.0));
            self.batches_seen += 1;
            (mean, var.mapv(|v| 1.0 / (v + EPS).sqrt()))
        } else {
            if self.batches_seen == 0 {
                return Err(Error::State(
                    "batch normalization has no running statistics yet; run a training batch first"
                        .into(),
                ));
            }
            (
                self.running_mean.clone(),
                self.running_var.mapv(|v| 1.0 / (v + EPS).sqrt()),
            )
        };
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        Ok((
            y,
            BatchNormCache {
                xhat,
                inv_std,
                train,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &BatchNormCache,
        dy: &Array2<f64>,
        grad: &mut BatchNorm,
    ) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        if !cache.train {
            return dxhat * &cache.inv_std;
        }
        let n = dy.nrows() as f64;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mut dx = dxhat * n - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
        dx *= &(&cache.inv_std / n);
        dx
    }
}

impl Params for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_array(prefix, "gamma", &self.gamma, f);
        visit_array(prefix, "beta", &self.beta, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_array_mut(prefix, "gamma", &mut self.gamma, f);
        visit_array_mut(prefix, "beta", &mut self.beta, f);
    }
}
