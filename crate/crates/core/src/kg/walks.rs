use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EntityType, KnowledgeGraph};
use crate::error::{Error, Result};
use crate::seeds::mix_seed;

/// A walk is a sequence of entity indices.
pub type Walk = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    /// Cyclic type pattern; first and last entries must agree.
    pub metapath: Vec<EntityType>,
    /// Maximum number of entities per walk.
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            metapath: vec![EntityType::Category, EntityType::Context, EntityType::Category],
            walk_length: 20,
            walks_per_node: 40,
            seed: 0,
        }
    }
}

/// Type-constrained uniform random walks. Walk `w` from start node `v` draws from its
/// own stream seeded by `(seed, v, w)`, so results do not depend on iteration order.
pub fn metapath_walks(kg: &KnowledgeGraph, config: &WalkConfig) -> Result<Vec<Walk>> {
    let path = &config.metapath;
    if path.len() < 2 || path.first() != path.last() {
        return Err(Error::invalid("metapath must have at least two entries and start and end with the same type"));
    }
    if config.walk_length == 0 {
        return Err(Error::invalid("walk length must be at least 1"));
    }
    let period = path.len() - 1;
    let mut walks = Vec::new();
    for start in kg.entities_of(path[0]) {
        for w in 0..config.walks_per_node {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[start as u64, w as u64]));
            let mut walk = vec![start];
            let mut cur = start;
            while walk.len() < config.walk_length {
                let want = path[walk.len() % period];
                let options: Vec<usize> =
                    kg.neighbors(cur).iter().copied().filter(|&n| kg.entity_type(n) == want).collect();
                if options.is_empty() {
                    break;
                }
                cur = options[rng.gen_range(0..options.len())];
                walk.push(cur);
            }
            walks.push(walk);
        }
    }
    Ok(walks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new();
        for c in ["a", "b", "lonely"] {
            kg.add_entity(c, EntityType::Category).unwrap();
        }
        kg.add_entity("x", EntityType::Context).unwrap();
        kg.add_triple("a", "appears_in", "x").unwrap();
        kg.add_triple("b", "appears_in", "x").unwrap();
        kg
    }

    #[test]
    fn walks_follow_types() {
        let kg = star();
        let walks =
            metapath_walks(&kg, &WalkConfig { walk_length: 7, walks_per_node: 3, ..Default::default() }).unwrap();
        assert_eq!(walks.len(), 9);
        for w in &walks {
            for (i, &e) in w.iter().enumerate() {
                let want = if i % 2 == 0 { EntityType::Category } else { EntityType::Context };
                assert_eq!(kg.entity_type(e), want);
            }
        }
        let lonely = kg.entity("lonely").unwrap();
        assert!(walks.iter().filter(|w| w[0] == lonely).all(|w| w.len() == 1));
    }

    #[test]
    fn rejects_open_metapath() {
        let cfg = WalkConfig { metapath: vec![EntityType::Category, EntityType::Context], ..Default::default() };
        assert!(metapath_walks(&star(), &cfg).is_err());
    }
}
