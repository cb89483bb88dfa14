//! Exact t-SNE and the silhouette score, for inspecting the latent space.

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` scales with the point count: max(N / (4 * exaggeration), 50).
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pairwise_sq(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(x.row(i), x.row(j));
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Conditional affinities of row `i` at precision `beta`, and their entropy.
fn row_affinities(d: &Array2<f64>, i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let n = d.nrows();
    let min = (0..n)
        .filter(|&j| j != i)
        .map(|j| d[[i, j]])
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for j in 0..n {
        out[j] = if j == i { 0.0 } else { (-beta * (d[[i, j]] - min)).exp() };
        sum += out[j];
    }
    let mut h = 0.0;
    for j in 0..n {
        out[j] /= sum;
        if out[j] > 0.0 {
            h -= out[j] * out[j].ln();
        }
    }
    h
}

/// Symmetric joint affinities with each row calibrated to `perplexity`.
fn joint_affinities(x: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let d = pairwise_sq(x);
    let target = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    let mut row = vec![0.0; n];
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
        for _ in 0..100 {
            let h = row_affinities(&d, i, beta, &mut row);
            if (h - target).abs() < 1e-5 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        row_affinities(&d, i, beta, &mut row);
        for j in 0..n {
            p[[i, j]] = row[j];
        }
    }
    let sym = (&p + &p.t()) / (2.0 * n as f64);
    sym.mapv(|v| v.max(1e-12))
}

/// Exact O(N²) t-SNE embedding into two dimensions. Deterministic for a
/// fixed seed. The perplexity is capped at (N - 1) / 3 for small inputs.
pub fn tsne(x: &Array2<f64>, config: &TsneConfig) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::Data(format!("projection needs at least 3 points, got {n}")));
    }
    if !(config.perplexity > 0.0) {
        return Err(Error::config(format!(
            "eval.perplexity must be > 0, got {}",
            config.perplexity
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input to projection".into()));
    }
    let perplexity = config.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let p = joint_affinities(x, perplexity);
    let lr = config
        .learning_rate
        .unwrap_or_else(|| (n as f64 / config.early_exaggeration / 4.0).max(50.0));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));

    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iters {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < config.exaggeration_iters { 0.5 } else { 0.8 };
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let v = 1.0 / (1.0 + sq_dist(y.row(i), y.row(j)));
                num[[i, j]] = v;
                num[[j, i]] = v;
                total += 2.0 * v;
            }
        }
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[[i, j]];
                let q = (w / total).max(1e-12);
                let f = 4.0 * (exaggeration * p[[i, j]] - q) * w;
                for c in 0..2 {
                    grad[[i, c]] += f * (y[[i, c]] - y[[j, c]]);
                }
            }
        }
        for ((g, v), gain) in grad.iter().zip(velocity.iter()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*v > 0.0) {
                *gain + 0.2
            } else {
                (*gain * 0.8).max(0.01)
            };
        }
        velocity = momentum * &velocity - lr * &(&gains * &grad);
        y += &velocity;
        let mean = y.mean_axis(ndarray::Axis(0)).expect("non-empty");
        y -= &mean;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("projection diverged".into()));
    }
    Ok(y)
}

/// Mean silhouette coefficient of `x` under the partition `labels`.
/// Points alone in their group score 0.
pub fn silhouette(x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let sizes = (0..k)
        .map(|c| labels.iter().filter(|&&l| l == c).count())
        .collect::<Vec<_>>();
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Data("silhouette needs at least two non-empty groups".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(x.row(i), x.row(j)).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}
