use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Params;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// L2 penalty added to the gradient (coupled, not decoupled).
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: AdamState::default(),
        }
    }

    /// Applies one update to every tensor whose name passes `trainable`.
    ///
    /// `grads` must visit tensors in the same order and shapes as `params`.
    /// Returns the global gradient norm before clipping; `clip_norm <= 0`
    /// disables clipping.
    pub fn step<P: Params>(
        &mut self,
        params: &mut P,
        grads: &P,
        trainable: &dyn Fn(&str) -> bool,
        clip_norm: f64,
    ) -> f64 {
        let mut flat: Vec<(String, Vec<f64>)> = Vec::new();
        grads.visit("", &mut |name, _, g| {
            if trainable(name) {
                flat.push((name.to_string(), g.to_vec()));
            }
        });
        let norm = flat
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let scale = if clip_norm > 0.0 && norm > clip_norm {
            clip_norm / norm
        } else {
            1.0
        };
        self.state.step += 1;
        let t = self.state.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let mut it = flat.into_iter();
        let moments = &mut self.state.moments;
        params.visit_mut("", &mut |name, _, p| {
            if !trainable(name) {
                return;
            }
            let (gname, g) = it.next().expect("gradient tensors match parameters");
            debug_assert_eq!(gname, name);
            let mom = moments.entry(gname).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
            for i in 0..p.len() {
                let gi = g[i] * scale + c.weight_decay * p[i];
                mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * gi;
                mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = mom.m[i] / bc1;
                let vhat = mom.v[i] / bc2;
                p[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.eps);
            }
        });
        norm
    }
}
