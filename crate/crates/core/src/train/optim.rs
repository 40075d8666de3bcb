use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with moments held per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<S: Scalar>(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update with learning rate `lr`; `grads` follows the store's parameter order.
    ///
    /// Fails before touching any parameter if a gradient is non-finite.
    pub fn update<S: Scalar>(&mut self, store: &mut ParamStore<S>, grads: &[Tensor<S>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Parameter(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.shape() != store.get(id).shape() {
                return Err(Error::Parameter(format!(
                    "gradient {:?} does not match parameter {} {:?}",
                    g.shape(),
                    store.name(id),
                    store.get(id).shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for parameter {}", store.name(id))));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, (id, g)) in ids.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let data: Vec<S> = store
                .get(id)
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(i, (&w, &gi))| {
                    let gi = gi.as_f64();
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                    let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    S::c(w.as_f64() - update)
                })
                .collect();
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::new(shape, data)?)?;
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient list.
pub fn grad_norm<S: Scalar>(grads: &[Tensor<S>]) -> f64 {
    grads.iter().flat_map(|g| g.data().iter()).map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<S: Scalar>(grads: &mut [Tensor<S>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.map(|x| S::c(x.as_f64() * s));
        }
    }
    norm
}
