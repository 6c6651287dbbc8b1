//! Relational graph attention over the three weighted edge types.
//!
//! Per layer and edge type `r`, with `z = W_r h`:
//! `e_ij = leaky(a_dst·z_i + a_src·z_j) + ln w_ij`, `α_ij = softmax_j(e_ij)` over the
//! type-`r` neighbors of `i`, and
//! `h'_i = act(W_self h_i + b + Σ_r Σ_j α_ij z_j)`. Edges with nonpositive weight
//! carry no attention mass. The last layer is linear.

use rand::Rng;

use super::{EdgeType, WeightedGraph};
use crate::codec::complexity::LayerOp;
use crate::error::{Error, Result};
use crate::numeric::{Dense, Graph, ParameterStore, Tensor, Var, LEAKY_SLOPE};

pub const RGAT_LAYERS: usize = 3;
/// Negative slope inside the attention logit.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Rgat {
    /// Pooled proposal feature size `D_p`.
    pub input_dim: usize,
    /// Hidden and output size `d`; knowledge-graph embeddings must have this size.
    pub dim: usize,
}

impl Rgat {
    pub fn new(input_dim: usize, dim: usize) -> Self {
        Rgat { input_dim, dim }
    }

    fn proj(&self) -> Dense {
        Dense::new(self.input_dim, self.dim)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        let d = self.dim;
        self.proj().init(store, "rgat.proj", rng)?;
        for l in 0..RGAT_LAYERS {
            store.init_weight(format!("rgat.l{l}.self.w"), &[d, d], d, rng)?;
            store.init_zeros(format!("rgat.l{l}.self.b"), &[d])?;
            for t in EdgeType::ALL {
                let p = format!("rgat.l{l}.{}", t.name());
                store.init_weight(format!("{p}.w"), &[d, d], d, rng)?;
                store.init_weight(format!("{p}.src"), &[d, 1], d, rng)?;
                store.init_weight(format!("{p}.dst"), &[d, 1], d, rng)?;
            }
        }
        Ok(())
    }

    /// Initial node features: projected proposal features stacked above the category
    /// embeddings `[K_nodes, d]`.
    pub fn node_features(&self, g: &Graph, store: &ParameterStore, proposals: Var, categories: &Tensor) -> Result<Var> {
        if categories.ndim() != 2 || categories.shape()[1] != self.dim {
            return Err(Error::shape("rgat category features", categories.shape(), &[0, self.dim]));
        }
        let p = self.proj().forward(g, store, "rgat.proj", proposals)?;
        let k = g.constant(categories.clone());
        g.concat0(&[p, k])
    }

    /// Three attention layers over node features `h [N, d]`; returns `[N, d]`.
    pub fn rgat_forward(&self, g: &Graph, store: &ParameterStore, graph: &WeightedGraph, h: Var) -> Result<Var> {
        let n = graph.node_count();
        if g.shape(h) != [n, self.dim] {
            return Err(Error::shape("rgat_forward", &g.shape(h), &[n, self.dim]));
        }
        let mut h = h;
        for l in 0..RGAT_LAYERS {
            h = self.layer(g, store, graph, l, h)?;
            if l + 1 < RGAT_LAYERS {
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    fn layer(&self, g: &Graph, store: &ParameterStore, graph: &WeightedGraph, l: usize, h: Var) -> Result<Var> {
        let n = graph.node_count();
        let w = g.param(store, &format!("rgat.l{l}.self.w"))?;
        let b = g.param(store, &format!("rgat.l{l}.self.b"))?;
        let mut terms = vec![g.fully_connected(h, w, b)?];
        for t in EdgeType::ALL {
            let edges: Vec<(usize, usize, f64)> = graph.directed(t).into_iter().filter(|e| e.2 > 0.0).collect();
            if edges.is_empty() {
                continue;
            }
            let p = format!("rgat.l{l}.{}", t.name());
            let wr = g.param(store, &format!("{p}.w"))?;
            let a_src = g.param(store, &format!("{p}.src"))?;
            let a_dst = g.param(store, &format!("{p}.dst"))?;
            let z = g.matmul(h, wr)?;
            let s_src = g.matmul(z, a_src)?;
            let s_dst = g.matmul(z, a_dst)?;
            let dst: Vec<usize> = edges.iter().map(|e| e.0).collect();
            let src: Vec<usize> = edges.iter().map(|e| e.1).collect();
            let logit = g.add(g.gather_rows(s_dst, &dst)?, g.gather_rows(s_src, &src)?)?;
            let logit = g.leaky_relu(logit, ATTENTION_SLOPE);
            let bias = g.constant(Tensor::from_parts(vec![edges.len(), 1], edges.iter().map(|e| e.2.ln()).collect()));
            let logit = g.add(logit, bias)?;
            let alpha = g.segment_softmax(g.reshape(logit, &[edges.len()])?, &dst, n)?;
            let msg = g.mul_rows(g.gather_rows(z, &src)?, alpha)?;
            terms.push(g.scatter_add_rows(msg, &dst, n)?);
        }
        g.add_n(&terms)
    }

    /// Attention coefficients `(destination, source, α)` of one layer and edge type,
    /// evaluated at node features `h`.
    pub fn attention(
        &self,
        store: &ParameterStore,
        graph: &WeightedGraph,
        layer: usize,
        t: EdgeType,
        h: &Tensor,
    ) -> Result<Vec<(usize, usize, f64)>> {
        let g = Graph::inference();
        let hv = g.constant(h.clone());
        let edges: Vec<(usize, usize, f64)> = graph.directed(t).into_iter().filter(|e| e.2 > 0.0).collect();
        if edges.is_empty() {
            return Ok(Vec::new());
        }
        let p = format!("rgat.l{layer}.{}", t.name());
        let z = g.matmul(hv, g.param(store, &format!("{p}.w"))?)?;
        let s_src = g.value(g.matmul(z, g.param(store, &format!("{p}.src"))?)?);
        let s_dst = g.value(g.matmul(z, g.param(store, &format!("{p}.dst"))?)?);
        let dst: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let logits: Vec<f64> = edges
            .iter()
            .map(|&(i, j, w)| {
                let x = s_dst.data()[i] + s_src.data()[j];
                (if x > 0.0 { x } else { ATTENTION_SLOPE * x }) + w.ln()
            })
            .collect();
        let lv = g.constant(Tensor::from_parts(vec![edges.len()], logits));
        let alpha = g.value(g.segment_softmax(lv, &dst, graph.node_count())?);
        Ok(edges.iter().zip(alpha.data()).map(|(e, &a)| (e.0, e.1, a)).collect())
    }

    /// Layer cost for a graph with `nodes` nodes and `edges[t]` directed edges per type
    /// (projection of `proposals` rows included). Every edge type is counted, so the
    /// parameter total does not depend on the graph.
    pub fn layer_ops(&self, proposals: usize, nodes: usize, edges: [usize; 3]) -> Vec<LayerOp> {
        let d = self.dim;
        let mut ops = vec![self.proj().op(proposals)];
        for _ in 0..RGAT_LAYERS {
            ops.push(Dense::new(d, d).op(nodes));
            for &e in &edges {
                ops.push(LayerOp::Matmul { inputs: d, outputs: d, rows: nodes });
                ops.push(LayerOp::Matmul { inputs: d, outputs: 2, rows: nodes });
                ops.push(LayerOp::Add { elements: e * d });
            }
        }
        ops
    }
}

#[cfg(test)]
mod tests {
    use super::super::Edge;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize) -> (Rgat, ParameterStore) {
        let r = Rgat::new(3, d);
        let mut store = ParameterStore::new();
        r.init(&mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        (r, store)
    }

    #[test]
    fn isolated_node_uses_self_loop_only() {
        let (r, store) = setup(2);
        let graph = WeightedGraph { proposals: 1, categories: vec![], pp: vec![], pk: vec![], kk: vec![] };
        let h = Tensor::new(&[1, 2], vec![0.3, -0.7]).unwrap();
        let g = Graph::inference();
        let out = g.value(r.rgat_forward(&g, &store, &graph, g.constant(h.clone())).unwrap());
        let mut x = h.to_vec();
        for l in 0..RGAT_LAYERS {
            let w = store.get(&format!("rgat.l{l}.self.w")).unwrap();
            let b = store.get(&format!("rgat.l{l}.self.b")).unwrap();
            let mut y: Vec<f64> = (0..2).map(|j| b.data()[j] + x[0] * w.at(&[0, j]) + x[1] * w.at(&[1, j])).collect();
            if l + 1 < RGAT_LAYERS {
                y.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v *= LEAKY_SLOPE
                    }
                });
            }
            x = y;
        }
        for (o, e) in out.data().iter().zip(&x) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_gives_identical_outputs() {
        let (r, store) = setup(3);
        let graph = WeightedGraph {
            proposals: 2,
            categories: vec![],
            pp: vec![Edge { a: 0, b: 1, weight: 0.6 }],
            pk: vec![],
            kk: vec![],
        };
        let g = Graph::inference();
        let h = g.constant(Tensor::new(&[2, 3], vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.3]).unwrap());
        let out = g.value(r.rgat_forward(&g, &store, &graph, h).unwrap());
        for j in 0..3 {
            assert_eq!(out.data()[j], out.data()[3 + j]);
        }
    }

    #[test]
    fn counted_parameters_match_store() {
        let (r, store) = setup(4);
        let c = crate::codec::complexity::count_complexity(&r.layer_ops(2, 5, [2, 6, 0]));
        assert_eq!(c.parameters as usize, store.scalar_count());
    }

    #[test]
    fn attention_sums_to_one_per_node() {
        let (r, store) = setup(2);
        let graph = WeightedGraph {
            proposals: 3,
            categories: vec![],
            pp: vec![
                Edge { a: 0, b: 1, weight: 0.5 },
                Edge { a: 0, b: 2, weight: 0.9 },
                Edge { a: 1, b: 2, weight: 0.2 },
            ],
            pk: vec![],
            kk: vec![],
        };
        let h = Tensor::from_fn(&[3, 2], |i| (i as f64).cos());
        let att = r.attention(&store, &graph, 0, EdgeType::Pp, &h).unwrap();
        for i in 0..3 {
            let s: f64 = att.iter().filter(|e| e.0 == i).map(|e| e.2).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
