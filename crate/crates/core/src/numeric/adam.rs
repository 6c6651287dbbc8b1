use std::collections::BTreeMap;

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Learning rate used for the full-scale system.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: DEFAULT_LEARNING_RATE, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected Adam moments, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every parameter using its accumulated gradient.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        self.step_where(store, |_| true)
    }

    /// Apply one update to parameters whose name satisfies `trainable`.
    pub fn step_where(&mut self, store: &mut ParameterStore, trainable: impl Fn(&str) -> bool) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, p) in store.iter_mut() {
            if !trainable(name) {
                continue;
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!("non-finite gradient for `{name}`")));
            }
            let n = p.value.len();
            let m = self.first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            if m.len() != n {
                return Err(Error::shape("adam moments", &[m.len()], &[n]));
            }
            let mut data = p.value.to_vec();
            for i in 0..n {
                let g = p.grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
            }
            p.value = Tensor::from_parts(p.value.shape().to_vec(), data);
        }
        Ok(())
    }

    /// Flatten into named tensors for checkpointing.
    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("adam.step".to_string(), Tensor::scalar(self.step as f64))];
        for (k, m) in &self.first {
            out.push((format!("adam.m.{k}"), Tensor::from_parts(vec![m.len()], m.clone())));
        }
        for (k, v) in &self.second {
            out.push((format!("adam.v.{k}"), Tensor::from_parts(vec![v.len()], v.clone())));
        }
        out
    }

    /// Restore from entries produced by [`AdamState::to_entries`]; other names are ignored.
    pub fn from_entries(config: AdamConfig, entries: &[(String, Tensor)]) -> Self {
        let mut st = AdamState::new(config);
        for (name, t) in entries {
            if name == "adam.step" {
                st.step = t.item() as u64;
            } else if let Some(k) = name.strip_prefix("adam.m.") {
                st.first.insert(k.to_string(), t.to_vec());
            } else if let Some(k) = name.strip_prefix("adam.v.") {
                st.second.insert(k.to_string(), t.to_vec());
            }
        }
        st
    }
}
