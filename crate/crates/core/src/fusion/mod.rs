//! Knowledge-driven refinement of proposal classifications: a weighted graph over
//! proposal and knowledge-graph category nodes, a relational graph attention network,
//! and classification heads that keep the original proposal features.

mod rgat;

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::complexity::LayerOp;
use crate::error::{Error, Result};
use crate::kg::{cosine_similarity, EmbeddingTable};
use crate::numeric::{Dense, Graph, ParameterStore, Tensor, Var, LEAKY_SLOPE};

pub use rgat::{Rgat, ATTENTION_SLOPE, RGAT_LAYERS};

/// The three weighted edge sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeType {
    /// Proposal to proposal.
    Pp,
    /// Proposal to knowledge-graph category.
    Pk,
    /// Category to category.
    Kk,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::Pp, EdgeType::Pk, EdgeType::Kk];

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Pp => "pp",
            EdgeType::Pk => "pk",
            EdgeType::Kk => "kk",
        }
    }
}

/// Undirected weighted edge between global node indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Nodes `0..proposals` are proposals; the following `categories.len()` nodes are
/// knowledge-graph category nodes, `categories[j]` giving the class of node
/// `proposals + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    pub proposals: usize,
    pub categories: Vec<usize>,
    pub pp: Vec<Edge>,
    pub pk: Vec<Edge>,
    pub kk: Vec<Edge>,
}

impl WeightedGraph {
    pub fn node_count(&self) -> usize {
        self.proposals + self.categories.len()
    }

    pub fn edges(&self, t: EdgeType) -> &[Edge] {
        match t {
            EdgeType::Pp => &self.pp,
            EdgeType::Pk => &self.pk,
            EdgeType::Kk => &self.kk,
        }
    }

    /// Directed `(destination, source, weight)` pairs of one type; each undirected
    /// edge appears in both directions.
    pub fn directed(&self, t: EdgeType) -> Vec<(usize, usize, f64)> {
        self.edges(t).iter().flat_map(|e| [(e.a, e.b, e.weight), (e.b, e.a, e.weight)]).collect()
    }

    /// Place several per-image graphs side by side: all proposals first, then all
    /// category nodes, with no edges between images.
    pub fn disjoint_union(graphs: &[WeightedGraph]) -> WeightedGraph {
        let total_p: usize = graphs.iter().map(|g| g.proposals).sum();
        let mut out = WeightedGraph {
            proposals: total_p,
            categories: Vec::new(),
            pp: Vec::new(),
            pk: Vec::new(),
            kk: Vec::new(),
        };
        let mut p_off = 0;
        let mut k_off = total_p;
        for g in graphs {
            let map = |n: usize| if n < g.proposals { n + p_off } else { n - g.proposals + k_off };
            let shift = |es: &[Edge]| -> Vec<Edge> {
                es.iter().map(|e| Edge { a: map(e.a), b: map(e.b), weight: e.weight }).collect()
            };
            out.pp.extend(shift(&g.pp));
            out.pk.extend(shift(&g.pk));
            out.kk.extend(shift(&g.kk));
            out.categories.extend_from_slice(&g.categories);
            p_off += g.proposals;
            k_off += g.categories.len();
        }
        out
    }

    /// Human-readable listing of nodes and typed edges.
    pub fn to_text(&self, class_names: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "nodes {} (proposals {}, categories {})",
            self.node_count(),
            self.proposals,
            self.categories.len()
        );
        for (j, &c) in self.categories.iter().enumerate() {
            let name = class_names.get(c).map(String::as_str).unwrap_or("?");
            let _ = writeln!(s, "node {} category {}", self.proposals + j, name);
        }
        for t in EdgeType::ALL {
            for e in self.edges(t) {
                let _ = writeln!(s, "edge {} {} {} {:.6}", t.name(), e.a, e.b, e.weight);
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// Categories linked per proposal; `None` links every category.
    pub top_m: Option<usize>,
    /// Category pairs linked by embedding similarity: all pairs when true.
    pub kk_all_pairs: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { top_m: Some(3), kk_all_pairs: true }
    }
}

/// Build the fusion graph for one image.
///
/// `features` are `[P, D_p]` pooled features, `confidences` are `[P, K + 1]` with the
/// background class last, and `class_names[k]` names the knowledge-graph entity of
/// class `k`. `kk_pairs` restricts category edges when `kk_all_pairs` is false.
pub fn build_weighted_graph(
    features: &Tensor,
    confidences: &Tensor,
    class_names: &[String],
    embeddings: &EmbeddingTable,
    config: &GraphConfig,
    kk_pairs: &[(usize, usize)],
) -> Result<WeightedGraph> {
    let (p, d) = match features.shape() {
        &[p, d] if p > 0 => (p, d),
        s => return Err(Error::shape("build_weighted_graph (features)", s, &[1, 0])),
    };
    let k = class_names.len();
    if confidences.shape() != [p, k + 1] {
        return Err(Error::shape("build_weighted_graph (confidences)", confidences.shape(), &[p, k + 1]));
    }
    let vectors: Vec<&[f64]> = class_names
        .iter()
        .map(|n| embeddings.get(n).map_err(|_| Error::Missing(format!("knowledge-graph embedding for category `{n}`"))))
        .collect::<Result<_>>()?;

    let row = |i: usize| &features.data()[i * d..(i + 1) * d];
    let cos_or_zero = |u: &[f64], v: &[f64]| cosine_similarity(u, v).unwrap_or(0.0);
    let mut pp = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            pp.push(Edge { a: i, b: j, weight: cos_or_zero(row(i), row(j)) });
        }
    }
    let mut pk = Vec::new();
    let m = config.top_m.unwrap_or(k).min(k);
    for i in 0..p {
        let conf = &confidences.data()[i * (k + 1)..i * (k + 1) + k];
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
        for &c in &order[..m] {
            pk.push(Edge { a: i, b: p + c, weight: conf[c] });
        }
    }
    let mut kk = Vec::new();
    let pairs: Vec<(usize, usize)> = if config.kk_all_pairs {
        (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect()
    } else {
        kk_pairs.to_vec()
    };
    for (a, b) in pairs {
        if a >= k || b >= k || a == b {
            return Err(Error::invalid(format!("category pair ({a}, {b}) out of range")));
        }
        kk.push(Edge { a: p + a, b: p + b, weight: cosine_similarity(vectors[a], vectors[b])? });
    }
    Ok(WeightedGraph { proposals: p, categories: (0..k).collect(), pp, pk, kk })
}

/// Two fully-connected layers with a leaky ReLU between them, then softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub prefix: String,
    pub inputs: usize,
    pub hidden: usize,
    /// Foreground classes plus background.
    pub classes: usize,
}

impl ClassifierHead {
    pub fn new(prefix: &str, inputs: usize, hidden: usize, classes: usize) -> Self {
        ClassifierHead { prefix: prefix.to_string(), inputs, hidden, classes }
    }

    fn fc1(&self) -> Dense {
        Dense::new(self.inputs, self.hidden)
    }

    fn fc2(&self) -> Dense {
        Dense::new(self.hidden, self.classes)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.fc1().init(store, &format!("{}.fc1", self.prefix), rng)?;
        self.fc2().init(store, &format!("{}.fc2", self.prefix), rng)
    }

    /// Unnormalized class scores `[n, classes]`.
    pub fn logits(&self, g: &Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.inputs {
            return Err(Error::shape("classifier input", &shape, &[0, self.inputs]));
        }
        let h = self.fc1().forward(g, store, &format!("{}.fc1", self.prefix), x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        self.fc2().forward(g, store, &format!("{}.fc2", self.prefix), h)
    }

    pub fn layer_ops(&self, rows: usize) -> Vec<LayerOp> {
        vec![self.fc1().op(rows), self.fc2().op(rows)]
    }
}

/// Initial confidences: the head's softmax over categories plus background.
pub fn initial_classify(g: &Graph, store: &ParameterStore, head: &ClassifierHead, features: Var) -> Result<Var> {
    let logits = head.logits(g, store, features)?;
    g.softmax_rows(logits)
}

/// Final head input: enhanced proposal-node features next to the untouched pooled
/// features.
pub fn final_input(g: &Graph, enhanced: Var, original: Var) -> Result<Var> {
    let (se, so) = (g.shape(enhanced), g.shape(original));
    if se.len() != 2 || so.len() != 2 || se[0] != so[0] {
        return Err(Error::invalid(format!(
            "final classifier got {} enhanced proposal features for {} proposals",
            se.first().copied().unwrap_or(0),
            so.first().copied().unwrap_or(0)
        )));
    }
    g.concat_cols(enhanced, original)
}

/// Refined confidences from enhanced proposal-node features and original features.
pub fn final_classify(
    g: &Graph,
    store: &ParameterStore,
    head: &ClassifierHead,
    enhanced: Var,
    original: Var,
) -> Result<Var> {
    let x = final_input(g, enhanced, original)?;
    let logits = head.logits(g, store, x)?;
    g.softmax_rows(logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(k: usize) -> (Vec<String>, EmbeddingTable) {
        let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let data = (0..k * 2).map(|i| 1.0 + i as f64).collect();
        (names.clone(), EmbeddingTable::new(names, 2, data).unwrap())
    }

    #[test]
    fn counts_for_two_proposals_two_categories() {
        let (names, emb) = table(2);
        let feats = Tensor::new(&[2, 3], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let conf = Tensor::new(&[2, 3], vec![0.5, 0.3, 0.2, 0.1, 0.1, 0.8]).unwrap();
        let cfg = GraphConfig { top_m: Some(2), ..Default::default() };
        let g = build_weighted_graph(&feats, &conf, &names, &emb, &cfg, &[]).unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!((g.pp.len(), g.pk.len(), g.kk.len()), (1, 4, 1));
        assert_eq!(g.pp[0].weight, 1.0);
    }

    #[test]
    fn top_m_picks_highest_confidences() {
        let (names, emb) = table(3);
        let feats = Tensor::ones(&[1, 2]);
        let conf = Tensor::new(&[1, 4], vec![0.2, 0.7, 0.1, 0.0]).unwrap();
        let cfg = GraphConfig { top_m: Some(2), ..Default::default() };
        let g = build_weighted_graph(&feats, &conf, &names, &emb, &cfg, &[]).unwrap();
        let got: Vec<(usize, f64)> = g.pk.iter().map(|e| (e.b, e.weight)).collect();
        assert_eq!(got, vec![(2, 0.7), (1, 0.2)]);
    }

    #[test]
    fn missing_embedding_is_named() {
        let (_, emb) = table(2);
        let names = vec!["c0".to_string(), "ghost".to_string()];
        let err = build_weighted_graph(
            &Tensor::ones(&[1, 2]),
            &Tensor::full(&[1, 3], 1.0 / 3.0),
            &names,
            &emb,
            &GraphConfig::default(),
            &[],
        )
        .unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn zero_head_gives_uniform() {
        let head = ClassifierHead::new("h", 3, 4, 5);
        let mut store = ParameterStore::new();
        for (n, s) in [("h.fc1.w", vec![3, 4]), ("h.fc1.b", vec![4]), ("h.fc2.w", vec![4, 5]), ("h.fc2.b", vec![5])] {
            store.insert(n, Tensor::zeros(&s)).unwrap();
        }
        let g = Graph::inference();
        let x = g.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let p = g.value(initial_classify(&g, &store, &head, x).unwrap());
        assert!(p.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }
}
