use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamGrads, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    steps: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every non-frozen parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        for (name, g) in grads {
            let p = store.get(name)?;
            if p.value.shape() != g.shape() {
                return Err(Error::shape("adam", p.value.shape(), g.shape()));
            }
        }
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, g) in grads {
            let p = store.get_mut(name)?;
            if p.frozen {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let values = p.value.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gi;
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gi * gi;
                let mh = md[i] / bc1;
                let vh = vd[i] / bc2;
                values[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
