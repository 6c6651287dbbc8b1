//! Typed triple store, metapath-guided random walks, skip-gram entity embeddings and
//! cosine similarity.

mod embed;
mod walks;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embed::{train_embeddings, EmbeddingConfig, EmbeddingTable};
pub use walks::{metapath_walks, Walk, WalkConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Category,
    Context,
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityType::Category => "category",
            EntityType::Context => "context",
        })
    }
}

impl FromStr for EntityType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "category" => Ok(EntityType::Category),
            "context" => Ok(EntityType::Context),
            other => Err(Error::invalid(format!("unknown entity type `{other}` (expected category or context)"))),
        }
    }
}

/// Entities are indexed in insertion order; triples are `(head, relation, tail)` indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    names: Vec<String>,
    types: Vec<EntityType>,
    index: BTreeMap<String, usize>,
    relations: Vec<String>,
    relation_index: BTreeMap<String, usize>,
    triples: BTreeSet<(usize, usize, usize)>,
    /// Undirected neighbor sets over all relations.
    neighbors: Vec<BTreeSet<usize>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare an entity. Re-declaring with the same type is a no-op.
    pub fn add_entity(&mut self, name: &str, ty: EntityType) -> Result<usize> {
        if name.is_empty() || name.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("bad entity name {name:?}")));
        }
        if let Some(&i) = self.index.get(name) {
            if self.types[i] != ty {
                return Err(Error::invalid(format!("entity `{name}` declared as both {} and {ty}", self.types[i])));
            }
            return Ok(i);
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.types.push(ty);
        self.index.insert(name.to_string(), i);
        self.neighbors.push(BTreeSet::new());
        Ok(i)
    }

    /// Add a triple between declared entities. Returns false for a duplicate.
    pub fn add_triple(&mut self, head: &str, relation: &str, tail: &str) -> Result<bool> {
        let h = self.entity(head)?;
        let t = self.entity(tail)?;
        if relation.is_empty() || relation.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("bad relation name {relation:?}")));
        }
        let r = match self.relation_index.get(relation) {
            Some(&r) => r,
            None => {
                self.relations.push(relation.to_string());
                self.relation_index.insert(relation.to_string(), self.relations.len() - 1);
                self.relations.len() - 1
            }
        };
        let fresh = self.triples.insert((h, r, t));
        if fresh && h != t {
            self.neighbors[h].insert(t);
            self.neighbors[t].insert(h);
        }
        Ok(fresh)
    }

    pub fn entity(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::Missing(format!("entity `{name}`")))
    }

    pub fn entity_count(&self) -> usize {
        self.names.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn entity_type(&self, i: usize) -> EntityType {
        self.types[i]
    }

    pub fn entities_of(&self, ty: EntityType) -> Vec<usize> {
        (0..self.names.len()).filter(|&i| self.types[i] == ty).collect()
    }

    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.neighbors[i]
    }

    /// Triples as `(head, relation, tail)` names, in canonical order.
    pub fn triples(&self) -> Vec<(&str, &str, &str)> {
        self.triples.iter().map(|&(h, r, t)| (&*self.names[h], &*self.relations[r], &*self.names[t])).collect()
    }

    /// Tails reached from `head` through `relation`.
    pub fn related(&self, head: &str, relation: &str) -> Vec<&str> {
        let (Ok(h), Some(&r)) = (self.entity(head), self.relation_index.get(relation)) else {
            return Vec::new();
        };
        self.triples.range((h, r, 0)..(h, r + 1, 0)).map(|&(_, _, t)| &*self.names[t]).collect()
    }

    /// Parse the tab-separated triples format. Type declarations may appear anywhere
    /// in the file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kg = KnowledgeGraph::new();
        let mut pending = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let l = raw.trim_end_matches('\r');
            if l.trim().is_empty() || l.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = l.split('\t').collect();
            if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
                return Err(Error::Parse { line, msg: format!("expected 3 tab-separated fields, got {:?}", l) });
            }
            if parts[0] == "@type" {
                let ty = parts[2].parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?;
                kg.add_entity(parts[1], ty).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
            } else {
                pending.push((line, parts[0], parts[1], parts[2]));
            }
        }
        for (line, h, r, t) in pending {
            kg.add_triple(h, r, t)
                .map_err(|e| Error::Parse { line, msg: format!("{e} (declare it with an @type line)") })?;
        }
        Ok(kg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate() {
            out.push_str(&format!("@type\t{name}\t{}\n", self.types[i]));
        }
        for (h, r, t) in self.triples() {
            out.push_str(&format!("{h}\t{r}\t{t}\n"));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Structural equality that ignores declaration order.
    pub fn same_content(&self, other: &KnowledgeGraph) -> bool {
        let ents = |k: &KnowledgeGraph| -> BTreeSet<(String, EntityType)> {
            k.names.iter().cloned().zip(k.types.iter().copied()).collect()
        };
        let tri = |k: &KnowledgeGraph| -> BTreeSet<(String, String, String)> {
            k.triples().into_iter().map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string())).collect()
        };
        ents(self) == ents(other) && tri(self) == tri(other)
    }
}

/// `u·v / (‖u‖‖v‖)`, clamped into `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_similarity", &[u.len()], &[v.len()]));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::Numerical("cosine similarity of a zero or non-finite vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_small_graph() {
        let kg = KnowledgeGraph::parse("a\tlikes\tb\n@type\ta\tcategory\n@type\tb\tcontext\na\tlikes\tb\n").unwrap();
        assert_eq!((kg.entity_count(), kg.triple_count()), (2, 1));
        assert_eq!(kg.related("a", "likes"), vec!["b"]);
    }

    #[test]
    fn parse_errors_carry_line() {
        match KnowledgeGraph::parse("@type\ta\tcategory\na\tb\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match KnowledgeGraph::parse("@type\ta\tplanet\n") {
            Err(Error::Parse { line: 1, msg }) => assert!(msg.contains("planet")),
            other => panic!("{other:?}"),
        }
        assert!(KnowledgeGraph::parse("@type\ta\tcategory\na\tr\tzz\n").is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }
}
