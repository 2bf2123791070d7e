use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate at epoch 0.
    pub base_lr: f64,
    /// The learning rate halves every `halve_every` epochs (0 disables the schedule).
    pub halve_every: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr: 4e-4,
            halve_every: 6,
        }
    }
}

impl AdamConfig {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.halve_every == 0 {
            return self.base_lr;
        }
        self.base_lr * 0.5f64.powi((epoch / self.halve_every) as i32)
    }
}

/// Adam moments and step counter. Moments are created lazily, keyed by
/// parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: IndexMap<String, Tensor<S>>,
    pub v: IndexMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// One bias-corrected Adam update at learning rate `lr`.
    ///
    /// All gradients are validated before any parameter is touched.
    pub fn update(
        &mut self,
        params: &mut IndexMap<String, Tensor<S>>,
        grads: &IndexMap<String, Tensor<S>>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(Error::mismatch("adam gradient", g.shape(), p.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (one_b1, one_b2) = (S::lit(1.0 - c.beta1), S::lit(1.0 - c.beta2));
        let step_size = S::lit(lr / bc1);
        let inv_bc2 = S::lit(1.0 / bc2);
        let eps = S::lit(c.eps);

        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| p.zeros_like());
            let v = self.v.entry(name.clone()).or_insert_with(|| p.zeros_like());
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                *pv = *pv - step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Adam step at the scheduled learning rate for `epoch`.
pub fn adam_step<S: Scalar>(
    params: &mut IndexMap<String, Tensor<S>>,
    grads: &IndexMap<String, Tensor<S>>,
    state: &mut AdamState<S>,
    epoch: usize,
) -> Result<()> {
    let lr = state.config.lr_at_epoch(epoch);
    state.update(params, grads, lr)
}
