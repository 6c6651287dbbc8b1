use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cosine_similarity, KnowledgeGraph, Walk};
use crate::error::{Error, Result};
use crate::numeric::{Checkpoint, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly towards zero.
    pub lr: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { dim: 32, window: 3, negatives: 5, epochs: 50, lr: 0.025, seed: 0 }
    }
}

/// One `dim`-vector per entity, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    names: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

const PREFIX: &str = "emb.";

impl EmbeddingTable {
    pub fn new(names: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != names.len() * dim {
            return Err(Error::invalid(format!(
                "embedding table of {} entities needs {} values of dimension {dim}, got {}",
                names.len(),
                names.len() * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding value".into()));
        }
        Ok(EmbeddingTable { names, dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vector(i))
            .ok_or_else(|| Error::Missing(format!("embedding for `{name}`")))
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        cosine_similarity(self.get(a)?, self.get(b)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: format!("entity embeddings dim={}", self.dim),
            entries: self
                .names
                .iter()
                .enumerate()
                .map(|(i, n)| (format!("{PREFIX}{n}"), Tensor::from_parts(vec![self.dim], self.vector(i).to_vec())))
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut names = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (name, t) in &ckpt.entries {
            let Some(entity) = name.strip_prefix(PREFIX) else {
                continue;
            };
            if t.ndim() != 1 || dim.is_some_and(|d| d != t.len()) {
                return Err(Error::Format(format!("embedding `{entity}` has shape {:?}", t.shape())));
            }
            dim = Some(t.len());
            names.push(entity.to_string());
            data.extend_from_slice(t.data());
        }
        let dim = dim.ok_or_else(|| Error::Format("checkpoint holds no embeddings".into()))?;
        Self::new(names, dim, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Skip-gram with negative sampling over walk windows. Negatives are drawn from the
/// walk unigram distribution raised to 0.75. Entities absent from every walk keep
/// their random initial vector.
pub fn train_embeddings(kg: &KnowledgeGraph, walks: &[Walk], config: &EmbeddingConfig) -> Result<EmbeddingTable> {
    if config.dim < 1 {
        return Err(Error::invalid("embedding dimension must be at least 1"));
    }
    let n = kg.entity_count();
    let total: usize = walks.iter().map(|w| w.len()).sum();
    if n == 0 || total == 0 {
        return Err(Error::invalid("cannot train embeddings on an empty walk corpus"));
    }
    if walks.iter().flatten().any(|&e| e >= n) {
        return Err(Error::invalid("walk refers to an entity outside the graph"));
    }
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input: Vec<f64> = (0..n * d).map(|_| (rng.gen::<f64>() - 0.5) / d as f64).collect();
    let mut output = vec![0.0; n * d];

    let mut counts = vec![0.0f64; n];
    for &e in walks.iter().flatten() {
        counts[e] += 1.0;
    }
    let noise = WeightedIndex::new(counts.iter().map(|c| c.powf(0.75)))
        .map_err(|e| Error::invalid(format!("negative-sampling table: {e}")))?;

    let steps = (config.epochs * total).max(1) as f64;
    let mut done = 0usize;
    let mut grad = vec![0.0; d];
    for _ in 0..config.epochs {
        for walk in walks {
            for (pos, &center) in walk.iter().enumerate() {
                let lr = (config.lr * (1.0 - done as f64 / steps)).max(config.lr * 1e-4);
                done += 1;
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(walk.len());
                for (cpos, &ctx) in walk.iter().enumerate().take(hi).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let v = center * d;
                    let mut update = |target: usize, label: f64, input: &[f64], output: &mut [f64]| {
                        let u = target * d;
                        let dot: f64 = (0..d).map(|j| input[v + j] * output[u + j]).sum();
                        let g = lr * (label - sigmoid(dot));
                        for j in 0..d {
                            grad[j] += g * output[u + j];
                            output[u + j] += g * input[v + j];
                        }
                    };
                    update(ctx, 1.0, &input, &mut output);
                    for _ in 0..config.negatives {
                        let neg = noise.sample(&mut rng);
                        if neg != ctx {
                            update(neg, 0.0, &input, &mut output);
                        }
                    }
                    for j in 0..d {
                        input[v + j] += grad[j];
                    }
                }
            }
        }
    }
    let names = (0..n).map(|i| kg.name(i).to_string()).collect();
    EmbeddingTable::new(names, d, input)
}

#[cfg(test)]
mod tests {
    use super::super::EntityType;
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let t = EmbeddingTable::new(vec!["a".into(), "b".into()], 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let back = EmbeddingTable::from_checkpoint(&t.to_checkpoint()).unwrap();
        assert_eq!(t, back);
        assert!(matches!(t.get("zz"), Err(Error::Missing(_))));
    }

    #[test]
    fn zero_dim_rejected() {
        let mut kg = KnowledgeGraph::new();
        kg.add_entity("a", EntityType::Category).unwrap();
        let cfg = EmbeddingConfig { dim: 0, ..Default::default() };
        assert!(train_embeddings(&kg, &[vec![0]], &cfg).is_err());
    }
}
