use ndarray::{Array1, Array2, Axis};

use super::cluster::ClusterState;
use crate::error::{Error, Result};

/// Squared distances `‖z_i − μ_j‖²`, `[N × K]`.
fn squared_distances(z: &Array2<f64>, centroids: &Array2<f64>) -> Array2<f64> {
    let mut d = Array2::zeros((z.nrows(), centroids.nrows()));
    for (i, zi) in z.rows().into_iter().enumerate() {
        for (j, mj) in centroids.rows().into_iter().enumerate() {
            d[[i, j]] = zi
                .iter()
                .zip(mj.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
        }
    }
    d
}

/// Student-t soft assignment of every latent row to every centroid:
/// `Q_ij ∝ (1 + ‖z_i − μ_j‖²/ν)^(−(ν+1)/2)`, rows normalized.
pub fn soft_assign(z: &Array2<f64>, state: &ClusterState) -> Result<Array2<f64>> {
    if z.nrows() == 0 {
        return Err(Error::Shape("soft assignment needs at least one latent".into()));
    }
    if z.ncols() != state.dim() {
        return Err(Error::Shape(format!(
            "latents have {} dims, centroids {}",
            z.ncols(),
            state.dim()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite latent in soft assignment".into()));
    }
    let nu = state.t_dof;
    let power = -(nu + 1.0) / 2.0;
    // Normalize in log space: far-away points would underflow the raw kernel.
    let mut q = squared_distances(z, &state.centroids).mapv(|d| power * (1.0 + d / nu).ln());
    for mut row in q.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    Ok(q)
}

/// Backpropagates `dL/dQ` to the latents and centroids.
pub fn soft_assign_backward(
    z: &Array2<f64>,
    state: &ClusterState,
    q: &Array2<f64>,
    dq: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let nu = state.t_dof;
    let mu = &state.centroids;
    let d = squared_distances(z, mu);
    let row_dot: Array1<f64> = (dq * q).sum_axis(Axis(1));
    let mut dz = Array2::zeros(z.raw_dim());
    let mut dmu = Array2::zeros(mu.raw_dim());
    let factor = -(nu + 1.0) / (2.0 * nu);
    for i in 0..z.nrows() {
        for j in 0..mu.nrows() {
            // dL/dd_ij through the row normalization and the kernel.
            let c = (dq[[i, j]] - row_dot[i]) * q[[i, j]] * factor / (1.0 + d[[i, j]] / nu);
            for k in 0..z.ncols() {
                let diff = 2.0 * c * (z[[i, k]] - mu[[j, k]]);
                dz[[i, k]] += diff;
                dmu[[j, k]] -= diff;
            }
        }
    }
    (dz, dmu)
}

/// Sharpened target `P_ij = (Q_ij²/f_j) / Σ_j' (Q_ij'²/f_j')`, `f_j = Σ_i Q_ij`.
pub fn target_distribution(q: &Array2<f64>) -> Result<Array2<f64>> {
    let f = q.sum_axis(Axis(0));
    if let Some((j, &fj)) = f
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v >= f64::MIN_POSITIVE))
    {
        return Err(Error::DegenerateCluster {
            cluster: j,
            frequency: fj,
        });
    }
    let mut p = q.mapv(|v| v * v) / &f;
    for mut row in p.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(p)
}
