use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Adam with a step-decay learning-rate schedule: the effective rate is
/// `learning_rate * decay_factor^(epoch / decay_interval)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub step: u64,
    pub epoch: usize,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(learning_rate: f64, decay_factor: f64, decay_interval: usize) -> Self {
        AdamState {
            learning_rate,
            decay_factor,
            decay_interval: decay_interval.max(1),
            step: 0,
            epoch: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn effective_lr(&self) -> f64 {
        let k = (self.epoch / self.decay_interval) as i32;
        self.learning_rate * self.decay_factor.powi(k)
    }

    /// Applies one update to every trainable tensor in `store` from its
    /// accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.step += 1;
        let lr = self.effective_lr();
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let param: &mut Tensor = store.get_mut(id);
            let n = param.len();
            let m = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                first: vec![0.0; n],
                second: vec![0.0; n],
            });
            if m.first.len() != n || m.second.len() != n {
                return Err(Error::shape("adam_step", param.shape(), &[m.first.len()]));
            }
            let grad = param.grad().expect("trainable tensors carry grads").to_vec();
            let values = param.values_mut();
            for i in 0..n {
                let g = grad[i];
                m.first[i] = BETA1 * m.first[i] + (1.0 - BETA1) * g;
                m.second[i] = BETA2 * m.second[i] + (1.0 - BETA2) * g * g;
                let mhat = m.first[i] / bc1;
                let vhat = m.second[i] / bc2;
                values[i] -= lr * mhat / (vhat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
