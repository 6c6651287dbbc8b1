use std::collections::BTreeMap;

use rand::Rng;

use super::graph::{Gradients, Graph};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// Name-ordered collection of trainable parameters.
///
/// Iteration order is lexicographic by name, which keeps optimizer updates and
/// checkpoints deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let grad = vec![0.0; value.len()];
        self.params.insert(name, Parameter { value, grad });
        Ok(())
    }

    /// Fan-in-scaled uniform weights, `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn init_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        self.insert(name, Tensor::rand_uniform(shape, -bound, bound, rng))
    }

    pub fn init_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).map(|p| &p.value).ok_or_else(|| Error::Missing(format!("parameter `{name}`")))
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| Error::Missing(format!("parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape("ParameterStore::set", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Result<&[f64]> {
        self.params.get(name).map(|p| p.grad.as_slice()).ok_or_else(|| Error::Missing(format!("parameter `{name}`")))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Scalar count restricted to names starting with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, p)| p.value.len()).sum()
    }

    /// Add gradients of every parameter leaf recorded on `graph` into the gradient slots.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients) -> Result<()> {
        for (name, var) in graph.parameter_leaves() {
            let Some(g) = grads.get(var) else { continue };
            let p = self.params.get_mut(&name).ok_or_else(|| Error::Missing(format!("parameter `{name}`")))?;
            for (acc, &d) in p.grad.iter_mut().zip(g.data()) {
                *acc += d;
            }
        }
        Ok(())
    }

    /// Global L2 norm of the accumulated gradients of parameters accepted by `filter`.
    pub fn grad_norm(&self, filter: impl Fn(&str) -> bool) -> f64 {
        self.params
            .iter()
            .filter(|(k, _)| filter(k))
            .flat_map(|(_, p)| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Multiply every accumulated gradient by `factor`.
    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Copy every parameter of `other` into `self`, failing on name clashes.
    pub fn extend(&mut self, other: ParameterStore) -> Result<()> {
        for (name, p) in other.params {
            self.insert(name, p.value)?;
        }
        Ok(())
    }
}
