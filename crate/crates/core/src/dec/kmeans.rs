use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cluster::ClusterState;
use crate::data::Sentiment;
use crate::error::{Error, Result};

/// Lloyd iteration cap per restart.
pub const KMEANS_MAX_ITERS: usize = 100;
/// Independent k-means++ restarts; the lowest inertia wins.
pub const KMEANS_RESTARTS: usize = 5;

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(z: ndarray::ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    centroids
        .rows()
        .into_iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(z, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn kmeans_pp(z: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = z.nrows();
    let mut centroids = Array2::zeros((k, z.ncols()));
    centroids.row_mut(0).assign(&z.row(rng.random_range(0..n)));
    let mut d2: Array1<f64> = z.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&z.row(pick));
        for (i, r) in z.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.row(c)));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds. Returns centroids, assignments and inertia.
pub fn kmeans(z: &Array2<f64>, k: usize, seed: u64) -> Result<(Array2<f64>, Vec<usize>, f64)> {
    let n = z.nrows();
    if k < 2 {
        return Err(Error::config(format!("need at least 2 clusters, got {k}")));
    }
    if n < k {
        return Err(Error::Data(format!("{n} latents cannot seed {k} clusters")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Array2<f64>, Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let mut centroids = kmeans_pp(z, k, &mut rng);
        let mut assign = vec![usize::MAX; n];
        for _ in 0..KMEANS_MAX_ITERS {
            let mut changed = false;
            for (i, r) in z.rows().into_iter().enumerate() {
                let (j, _) = nearest(r, &centroids);
                if assign[i] != j {
                    assign[i] = j;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
            let mut counts = vec![0usize; k];
            for (i, r) in z.rows().into_iter().enumerate() {
                let mut row = sums.row_mut(assign[i]);
                row += &r;
                counts[assign[i]] += 1;
            }
            for j in 0..k {
                if counts[j] > 0 {
                    centroids.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
                }
            }
        }
        let inertia: f64 = z
            .rows()
            .into_iter()
            .zip(&assign)
            .map(|(r, &j)| sq_dist(r, centroids.row(j)))
            .sum();
        if best.as_ref().is_none_or(|b| inertia < b.2) {
            best = Some((centroids, assign, inertia));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Maps clusters to classes by majority vote of the labeled members.
///
/// Ties, and clusters without labeled members, go to the positive class.
/// With two clusters the map is forced to be a bijection: the cluster with
/// the larger positive-minus-negative margin is positive (cluster 0 on a
/// tie). With more clusters, if every cluster voted for one class, the
/// cluster leaning furthest toward the other class is flipped.
pub fn majority_mapping(assign: &[usize], labels: &[Option<Sentiment>], k: usize) -> Vec<Sentiment> {
    let mut margin = vec![0i64; k];
    for (&j, y) in assign.iter().zip(labels) {
        match y {
            Some(Sentiment::Positive) => margin[j] += 1,
            Some(Sentiment::Negative) => margin[j] -= 1,
            None => {}
        }
    }
    if k == 2 {
        let positive = if margin[1] > margin[0] { 1 } else { 0 };
        return (0..2)
            .map(|j| if j == positive { Sentiment::Positive } else { Sentiment::Negative })
            .collect();
    }
    let mut map: Vec<Sentiment> = margin
        .iter()
        .map(|&m| if m >= 0 { Sentiment::Positive } else { Sentiment::Negative })
        .collect();
    if map.iter().all(|&c| c == Sentiment::Positive) {
        let j = (0..k).min_by_key(|&j| (margin[j], j)).expect("k >= 2");
        map[j] = Sentiment::Negative;
    } else if map.iter().all(|&c| c == Sentiment::Negative) {
        let j = (0..k).max_by_key(|&j| (margin[j], std::cmp::Reverse(j))).expect("k >= 2");
        map[j] = Sentiment::Positive;
    }
    map
}

/// Seeds `k` centroids with k-means over the latents and fixes the
/// cluster-to-class map from the labeled rows.
pub fn init_centroids(
    z: &Array2<f64>,
    k: usize,
    seed: u64,
    labels: &[Option<Sentiment>],
    t_dof: f64,
) -> Result<ClusterState> {
    if labels.len() != z.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} latents",
            labels.len(),
            z.nrows()
        )));
    }
    let (centroids, assign, _) = kmeans(z, k, seed)?;
    let mut state = ClusterState::new(centroids, t_dof)?;
    state.cluster_to_class = Some(majority_mapping(&assign, labels, k));
    state.validate()?;
    Ok(state)
}

/// Moves every centroid whose total soft assignment is below `1e-8·N` to
/// the latent farthest from all current centroids. Returns the moved indices.
pub fn reseed_degenerate(state: &mut ClusterState, z: &Array2<f64>, q: &Array2<f64>) -> Vec<usize> {
    let n = z.nrows() as f64;
    let freq = q.sum_axis(ndarray::Axis(0));
    let mut moved = Vec::new();
    for j in 0..state.k() {
        if freq[j] < 1e-8 * n {
            let far = z
                .rows()
                .into_iter()
                .enumerate()
                .map(|(i, r)| (i, nearest(r, &state.centroids).1))
                .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
                .0;
            state.centroids.row_mut(j).assign(&z.row(far));
            moved.push(j);
        }
    }
    moved
}
