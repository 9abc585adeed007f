use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &HashMap<ParamId, Tensor<T>>) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let mut ids: Vec<_> = grads.keys().copied().collect();
        ids.sort();
        for id in ids {
            if store.entry(id).kind != ParamKind::Trainable {
                continue;
            }
            let g = &grads[&id];
            if g.shape() != store.get(id).shape() {
                return Err(Error::Shape(format!("gradient shape for {}", store.entry(id).name)));
            }
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let p = store.value_mut(id);
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment tensors keyed by parameter name, for checkpointing.
    pub fn export(&self, store: &ParamStore<T>) -> AdamState<T> {
        AdamState {
            step: self.step,
            moments: self
                .moments
                .iter()
                .map(|(id, (m, v))| (store.entry(*id).name.clone(), m.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn import(config: AdamConfig, state: AdamState<T>, store: &ParamStore<T>) -> Result<Self> {
        let mut moments = BTreeMap::new();
        for (name, m, v) in state.moments {
            let id = store
                .find(&name)
                .ok_or_else(|| Error::Param(format!("optimizer state for unknown parameter {name}")))?;
            if m.shape() != store.get(id).shape() || v.shape() != m.shape() {
                return Err(Error::Shape(format!("optimizer state shape for {name}")));
            }
            moments.insert(id, (m, v));
        }
        Ok(Self { config, step: state.step, moments })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub moments: Vec<(String, Tensor<T>, Tensor<T>)>,
}
