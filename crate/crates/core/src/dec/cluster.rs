use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Sentiment;
use crate::error::{Error, Result};
use crate::nn::{visit_array, visit_array_mut, Params};

/// Cluster centroids in latent space plus the Student-t kernel width.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    /// `[K × d_z]`.
    pub centroids: Array2<f64>,
    /// Student-t degrees of freedom of the assignment kernel.
    pub t_dof: f64,
    /// Class of each cluster, fixed when the centroids are initialized.
    pub cluster_to_class: Option<Vec<Sentiment>>,
}

impl ClusterState {
    pub fn new(centroids: Array2<f64>, t_dof: f64) -> Result<Self> {
        let state = ClusterState {
            centroids,
            t_dof,
            cluster_to_class: None,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k() < 2 {
            return Err(Error::config(format!("need at least 2 clusters, got {}", self.k())));
        }
        if !(self.t_dof.is_finite() && self.t_dof > 0.0) {
            return Err(Error::config(format!(
                "Student-t degrees of freedom must be positive, got {}",
                self.t_dof
            )));
        }
        if self.centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite centroid".into()));
        }
        if let Some(map) = &self.cluster_to_class {
            if map.len() != self.k() {
                return Err(Error::State(format!(
                    "cluster_to_class has {} entries for {} clusters",
                    map.len(),
                    self.k()
                )));
            }
            if Sentiment::ALL.iter().any(|c| !map.contains(c)) {
                return Err(Error::State(
                    "cluster_to_class must cover every class".into(),
                ));
            }
        }
        Ok(())
    }

    /// Clusters mapped to each class, indexed by [`Sentiment::index`].
    pub fn class_mapping(&self) -> Result<&[Sentiment]> {
        self.cluster_to_class
            .as_deref()
            .ok_or_else(|| Error::State("cluster_to_class has not been set".into()))
    }
}

impl Params for ClusterState {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_array(prefix, "centroids", &self.centroids, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_array_mut(prefix, "centroids", &mut self.centroids, f);
    }
}

/// Weights of the reconstruction, supervised and disentanglement terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub fn validate(&self, section: &str) -> Vec<String> {
        [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)]
            .into_iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(k, v)| format!("{section}.{k} must be finite and >= 0, got {v}"))
            .collect()
    }
}
