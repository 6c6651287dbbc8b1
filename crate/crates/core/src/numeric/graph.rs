//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Nodes are appended in
//! evaluation order, so a reverse sweep over the tape is a valid topological order for
//! the backward pass. Parameters enter the tape by name via [`Graph::param`] and their
//! gradients are folded back into a [`ParameterStore`] with
//! [`ParameterStore::accumulate`].

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Given the upstream gradient and a per-parent "needs gradient" mask, return one
/// gradient per parent (entries for masked-out parents may be `None`).
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, Var>>,
    frozen: Vec<String>,
    grad_enabled: bool,
    kink_margin: Cell<f64>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A recording graph: parameters and leaves track gradients.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            frozen: Vec::new(),
            grad_enabled: true,
            kink_margin: Cell::new(f64::INFINITY),
        }
    }

    /// A graph that never builds backward closures. Forward values are identical.
    pub fn inference() -> Self {
        Graph { grad_enabled: false, ..Self::new() }
    }

    /// A recording graph on which parameters whose names start with any of `prefixes`
    /// enter as constants.
    pub fn with_frozen(prefixes: &[&str]) -> Self {
        Graph { frozen: prefixes.iter().map(|p| p.to_string()).collect(), ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Smallest `|x|` any [`Graph::leaky_relu`] input has taken on this graph, or
    /// infinity if none ran.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin.get()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.push_node(value, false, Vec::new(), None)
    }

    /// An input that tracks gradients (when the graph records).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push_node(value, self.grad_enabled, Vec::new(), None)
    }

    /// Fetch parameter `name` from `store`. Repeated calls return the same node.
    pub fn param(&self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.borrow().get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = if self.frozen.iter().any(|p| name.starts_with(p.as_str())) {
            self.constant(value)
        } else {
            self.leaf(value)
        };
        self.params.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    pub(crate) fn parameter_leaves(&self) -> Vec<(String, Var)> {
        let mut out: Vec<(String, Var)> = self.params.borrow().iter().map(|(k, &v)| (k.clone(), v)).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Whether any of `parents` tracks gradients, i.e. whether an op must record a backward.
    pub(crate) fn needs(&self, parents: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        parents.iter().any(|p| nodes[p.0].requires_grad)
    }

    /// Record an op output. `backward` is only invoked when some parent needs a gradient.
    pub(crate) fn push(&self, value: Tensor, parents: &[Var], backward: impl FnOnce() -> BackwardFn) -> Var {
        if self.needs(parents) {
            self.push_node(value, true, parents.iter().map(|p| p.0).collect(), Some(backward()))
        } else {
            self.push_node(value, false, Vec::new(), None)
        }
    }

    fn push_node(&self, value: Tensor, requires_grad: bool, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, requires_grad, parents, backward });
        Var(nodes.len() - 1)
    }

    /// Reverse sweep from a scalar. Gradients are kept for leaves only.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::invalid(format!("backward needs a scalar loss, got shape {:?}", root.value.shape())));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut leaves: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if root.requires_grad {
            pending[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &nodes[i];
            let g = Tensor::from_parts(node.value.shape().to_vec(), g);
            let Some(bw) = &node.backward else {
                leaves[i] = Some(g);
                continue;
            };
            let mask: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = bw(&g, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &m) in node.parents.iter().zip(parent_grads).zip(&mask) {
                let (true, Some(pg)) = (m, pg) else { continue };
                debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                match &mut pending[p] {
                    Some(acc) => acc.iter_mut().zip(pg.data()).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg.into_vec()),
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` was unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros of `shape` when unreachable.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

// Elementwise and shape ops.
impl Graph {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(&self.value(b), |x, y| x + y)?;
        Ok(self.push(out, &[a, b], || Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(&self.value(b), |x, y| x - y)?;
        Ok(self.push(out, &[a, b], || Box::new(|g, _| vec![Some(g.clone()), Some(g.scale(-1.0))])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = ta.zip_map(&tb, |x, y| x * y)?;
        Ok(self.push(out, &[a, b], move || {
            Box::new(move |g, m| {
                vec![
                    m[0].then(|| g.zip_map(&tb, |x, y| x * y).expect("shape")),
                    m[1].then(|| g.zip_map(&ta, |x, y| x * y).expect("shape")),
                ]
            })
        }))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, &[a], move || Box::new(move |g, _| vec![Some(g.scale(c))]))
    }

    /// Sum of a list of equally shaped vars.
    pub fn add_n(&self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars.split_first().ok_or_else(|| Error::invalid("add_n of zero terms"))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        let x = self.value(a);
        let m = x.data().iter().fold(self.kink_margin.get(), |m, v| m.min(v.abs()));
        self.kink_margin.set(m);
        let out = x.map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, &[a], move || {
            Box::new(move |g, _| {
                vec![Some(g.zip_map(&x, |gv, xv| if xv > 0.0 { gv } else { slope * gv }).expect("shape"))]
            })
        })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        let y = out.clone();
        self.push(out, &[a], move || {
            Box::new(move |g, _| vec![Some(g.zip_map(&y, |gv, s| gv * s * (1.0 - s)).expect("shape"))])
        })
    }

    pub fn sum(&self, a: Var) -> Var {
        let x = self.value(a);
        let shape = x.shape().to_vec();
        self.push(Tensor::scalar(x.sum()), &[a], move || {
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))])
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let old = x.shape().to_vec();
        let out = x.reshape(shape)?;
        Ok(self.push(out, &[a], move || Box::new(move |g, _| vec![Some(g.reshape(&old).expect("shape"))])))
    }

    /// Pick scalars at flat offsets; output shape `[idx.len()]`.
    pub fn gather_flat(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if idx.is_empty() {
            return Err(Error::invalid("gather_flat with no indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.len()) {
            return Err(Error::invalid(format!("gather_flat index {bad} out of range {}", x.len())));
        }
        let out = Tensor::from_parts(vec![idx.len()], idx.iter().map(|&i| x.data()[i]).collect());
        let shape = x.shape().to_vec();
        let idx = idx.to_vec();
        Ok(self.push(out, &[a], move || {
            Box::new(move |g, _| {
                let mut d = vec![0.0; shape.iter().product()];
                for (&i, &gv) in idx.iter().zip(g.data()) {
                    d[i] += gv;
                }
                vec![Some(Tensor::from_parts(shape.clone(), d))]
            })
        }))
    }

    /// Concatenate along the leading axis: `[n1, ...] ++ [n2, ...]`.
    pub fn concat0(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let first = values.first().ok_or_else(|| Error::invalid("concat0 of zero tensors"))?;
        let inner = first.shape()[1..].to_vec();
        let mut data = Vec::new();
        let mut lead = 0;
        let mut sizes = Vec::with_capacity(values.len());
        for v in &values {
            if v.shape()[1..] != inner[..] {
                return Err(Error::shape("concat0", first.shape(), v.shape()));
            }
            lead += v.shape()[0];
            sizes.push(v.len());
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&inner);
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(self.push(Tensor::from_parts(shape, data), parts, move || {
            Box::new(move |g, m| {
                let mut off = 0;
                sizes
                    .iter()
                    .zip(&shapes)
                    .zip(m)
                    .map(|((&n, s), &need)| {
                        let piece = need.then(|| Tensor::from_parts(s.clone(), g.data()[off..off + n].to_vec()));
                        off += n;
                        piece
                    })
                    .collect()
            })
        }))
    }

    /// Concatenate two matrices along columns: `[n, d1] ++ [n, d2] -> [n, d1 + d2]`.
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::shape("concat_cols", ta.shape(), tb.shape()));
        }
        let (n, d1, d2) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(n * (d1 + d2));
        for r in 0..n {
            data.extend_from_slice(&ta.data()[r * d1..(r + 1) * d1]);
            data.extend_from_slice(&tb.data()[r * d2..(r + 1) * d2]);
        }
        Ok(self.push(Tensor::from_parts(vec![n, d1 + d2], data), &[a, b], move || {
            Box::new(move |g, _| {
                let w = d1 + d2;
                let mut ga = Vec::with_capacity(n * d1);
                let mut gb = Vec::with_capacity(n * d2);
                for r in 0..n {
                    ga.extend_from_slice(&g.data()[r * w..r * w + d1]);
                    gb.extend_from_slice(&g.data()[r * w + d1..(r + 1) * w]);
                }
                vec![Some(Tensor::from_parts(vec![n, d1], ga)), Some(Tensor::from_parts(vec![n, d2], gb))]
            })
        }))
    }
}
