use ndarray::{Array2, Axis};

use super::cluster::LossWeights;
use crate::data::Sentiment;
use crate::error::{Error, Result};

/// Floor applied inside every logarithm and KL denominator.
pub const LOG_EPS: f64 = 1e-10;

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `KL(P‖Q) = Σ_i Σ_j P_ij log(P_ij / Q_ij)`, summed over rows.
pub fn clustering_loss(p: &Array2<f64>, q: &Array2<f64>) -> Result<f64> {
    check_same_shape(p, q, "clustering loss")?;
    Ok(p
        .iter()
        .zip(q.iter())
        .map(|(&pv, &qv)| {
            if pv == 0.0 {
                0.0
            } else {
                pv * (pv.max(LOG_EPS).ln() - qv.max(LOG_EPS).ln())
            }
        })
        .sum())
}

/// `∂ KL(P‖Q) / ∂Q` with `P` held fixed.
pub fn clustering_loss_grad(p: &Array2<f64>, q: &Array2<f64>) -> Array2<f64> {
    let mut g = p.clone();
    ndarray::Zip::from(&mut g)
        .and(q)
        .for_each(|g, &qv| *g = -*g / qv.max(LOG_EPS));
    g
}

/// `(1/N) Σ_i ‖x_i − x̂_i‖²`, where `x_i` is the concatenation of row `i` of
/// every block. All blocks share the same `N` rows.
pub fn reconstruction_loss(targets: &[Array2<f64>], recon: &[Array2<f64>]) -> Result<f64> {
    let n = rows_of(targets, recon)?;
    let mut total = 0.0;
    for (x, xh) in targets.iter().zip(recon) {
        total += x
            .iter()
            .zip(xh.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / n as f64)
}

/// `∂L_recon/∂x̂` per block.
pub fn reconstruction_loss_grad(targets: &[Array2<f64>], recon: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let n = targets.first().map_or(1, |t| t.nrows()) as f64;
    targets
        .iter()
        .zip(recon)
        .map(|(x, xh)| (xh - x) * (2.0 / n))
        .collect()
}

fn rows_of(targets: &[Array2<f64>], recon: &[Array2<f64>]) -> Result<usize> {
    if targets.len() != recon.len() || targets.is_empty() {
        return Err(Error::Shape(format!(
            "reconstruction loss: {} target blocks, {} reconstructions",
            targets.len(),
            recon.len()
        )));
    }
    let n = targets[0].nrows();
    for (x, xh) in targets.iter().zip(recon) {
        check_same_shape(x, xh, "reconstruction loss")?;
        if x.nrows() != n {
            return Err(Error::Shape("reconstruction blocks differ in row count".into()));
        }
    }
    if n == 0 {
        return Err(Error::Shape("reconstruction loss of an empty batch".into()));
    }
    Ok(n)
}

/// Centered covariance `C = (1/N) ẑᵀẑ` of the latent batch.
pub fn latent_covariance(z: &Array2<f64>) -> Result<Array2<f64>> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::Shape(format!(
            "covariance is undefined for {n} latent sample(s); need at least 2"
        )));
    }
    let centered = z - &z.mean_axis(Axis(0)).expect("n >= 2");
    Ok(centered.t().dot(&centered) / n as f64)
}

/// Sum of squared off-diagonal entries of the latent covariance.
pub fn disentanglement_loss(z: &Array2<f64>) -> Result<f64> {
    let c = latent_covariance(z)?;
    let mut total = 0.0;
    for ((i, j), v) in c.indexed_iter() {
        if i != j {
            total += v * v;
        }
    }
    Ok(total)
}

/// `∂L_dis/∂Z = (4/N) ẑ C_off`, where `C_off` is `C` with a zero diagonal.
pub fn disentanglement_loss_grad(z: &Array2<f64>) -> Result<Array2<f64>> {
    let n = z.nrows();
    let mut c = latent_covariance(z)?;
    c.diag_mut().fill(0.0);
    let centered = z - &z.mean_axis(Axis(0)).expect("n >= 2");
    Ok(centered.dot(&c) * (4.0 / n as f64))
}

/// Class probabilities from cluster probabilities: each class collects the
/// mass of the clusters mapped to it.
pub fn class_probabilities(q: &Array2<f64>, cluster_to_class: &[Sentiment]) -> Result<Array2<f64>> {
    if q.ncols() != cluster_to_class.len() {
        return Err(Error::Shape(format!(
            "{} cluster columns but {} mapped clusters",
            q.ncols(),
            cluster_to_class.len()
        )));
    }
    let mut probs = Array2::zeros((q.nrows(), Sentiment::ALL.len()));
    for (j, class) in cluster_to_class.iter().enumerate() {
        let mut col = probs.column_mut(class.index());
        col += &q.column(j);
    }
    Ok(probs)
}

/// Cross-entropy over the labeled rows only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedOutcome {
    pub value: f64,
    pub labeled: usize,
    /// Set when no row carried a label; the value is then 0.
    pub no_labels: bool,
}

/// `−(1/N_l) Σ_{i∈L} log ŷ_{i,y_i}` over rows with `Some` label.
pub fn supervised_loss(probs: &Array2<f64>, labels: &[Option<Sentiment>]) -> Result<SupervisedOutcome> {
    if probs.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    let mut labeled = 0;
    for (i, y) in labels.iter().enumerate() {
        if let Some(y) = y {
            total -= probs[[i, y.index()]].max(LOG_EPS).ln();
            labeled += 1;
        }
    }
    Ok(if labeled == 0 {
        SupervisedOutcome {
            value: 0.0,
            labeled: 0,
            no_labels: true,
        }
    } else {
        SupervisedOutcome {
            value: total / labeled as f64,
            labeled,
            no_labels: false,
        }
    })
}

/// `∂L_sup/∂Q` through [`class_probabilities`].
pub fn supervised_loss_grad_q(
    q: &Array2<f64>,
    cluster_to_class: &[Sentiment],
    labels: &[Option<Sentiment>],
) -> Result<Array2<f64>> {
    let probs = class_probabilities(q, cluster_to_class)?;
    let labeled = labels.iter().filter(|l| l.is_some()).count();
    let mut g = Array2::zeros(q.raw_dim());
    if labeled == 0 {
        return Ok(g);
    }
    for (i, y) in labels.iter().enumerate() {
        if let Some(y) = y {
            let p = probs[[i, y.index()]].max(LOG_EPS);
            for (j, class) in cluster_to_class.iter().enumerate() {
                if class == y {
                    g[[i, j]] = -1.0 / (p * labeled as f64);
                }
            }
        }
    }
    Ok(g)
}

/// Values of the four objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub cluster: f64,
    pub recon: f64,
    pub supervised: f64,
    pub disentangle: f64,
}

/// `cluster + α·recon + β·supervised + γ·disentangle`.
pub fn combined_loss(terms: &LossTerms, w: &LossWeights) -> f64 {
    terms.cluster + w.alpha * terms.recon + w.beta * terms.supervised + w.gamma * terms.disentangle
}
