//! Matrix ops, row softmax, and the row gather/scatter primitives used by graph attention.

use super::graph::{Graph, Var};
use super::linalg::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::shape(op, s, &[0, 0])),
    }
}

fn check_indices(idx: &[usize], bound: usize, op: &str) -> Result<()> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(&i) => Err(Error::invalid(format!("{op}: index {i} out of range {bound}"))),
        None => Ok(()),
    }
}

impl Graph {
    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims2(&ta, "matmul")?;
        let (k2, n) = dims2(&tb, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, ta.data(), false, tb.data(), false, 0.0, &mut out);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), &[a, b], move || {
            Box::new(move |g, mask| {
                let ga = mask[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g.data(), false, tb.data(), true, 0.0, &mut d);
                    Tensor::from_parts(vec![m, k], d)
                });
                let gb = mask[1].then(|| {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, ta.data(), true, g.data(), false, 0.0, &mut d);
                    Tensor::from_parts(vec![k, n], d)
                });
                vec![ga, gb]
            })
        }))
    }

    /// Add `bias[e]` to every row of `x[n, e]`.
    pub fn add_row_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (n, e) = dims2(&tx, "add_row_bias")?;
        if tb.len() != e {
            return Err(Error::shape("add_row_bias", tx.shape(), tb.shape()));
        }
        let mut out = tx.to_vec();
        for row in out.chunks_mut(e) {
            row.iter_mut().zip(tb.data()).for_each(|(o, b)| *o += b);
        }
        let bshape = tb.shape().to_vec();
        Ok(self.push(Tensor::from_parts(vec![n, e], out), &[x, bias], move || {
            Box::new(move |g, mask| {
                let gb = mask[1].then(|| {
                    let mut d = vec![0.0; e];
                    for row in g.data().chunks(e) {
                        d.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    Tensor::from_parts(bshape.clone(), d)
                });
                vec![Some(g.clone()), gb]
            })
        }))
    }

    /// `x[b, d] · w[d, e] + bias[e]`
    pub fn fully_connected(&self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::shape("fully_connected", &sx, &sw));
        }
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, bias)
    }

    /// Row-wise softmax of `x[b, e]`.
    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (n, e) = dims2(&tx, "softmax_rows")?;
        let mut out = tx.to_vec();
        for row in out.chunks_mut(e) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let y = Tensor::from_parts(vec![n, e], out);
        let yc = y.clone();
        Ok(self.push(y, &[x], move || {
            Box::new(move |g, _| {
                let mut d = vec![0.0; n * e];
                for r in 0..n {
                    let ys = &yc.data()[r * e..(r + 1) * e];
                    let gs = &g.data()[r * e..(r + 1) * e];
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for j in 0..e {
                        d[r * e + j] = ys[j] * (gs[j] - dot);
                    }
                }
                vec![Some(Tensor::from_parts(vec![n, e], d))]
            })
        }))
    }

    /// Row-wise log-softmax of `x[b, e]`.
    pub fn log_softmax_rows(&self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (n, e) = dims2(&tx, "log_softmax_rows")?;
        let mut out = tx.to_vec();
        for row in out.chunks_mut(e) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let y = Tensor::from_parts(vec![n, e], out);
        let yc = y.clone();
        Ok(self.push(y, &[x], move || {
            Box::new(move |g, _| {
                let mut d = vec![0.0; n * e];
                for r in 0..n {
                    let ls = &yc.data()[r * e..(r + 1) * e];
                    let gs = &g.data()[r * e..(r + 1) * e];
                    let gsum: f64 = gs.iter().sum();
                    for j in 0..e {
                        d[r * e + j] = gs[j] - ls[j].exp() * gsum;
                    }
                }
                vec![Some(Tensor::from_parts(vec![n, e], d))]
            })
        }))
    }

    /// `out[i] = x[idx[i]]` for rows of `x[n, d]`.
    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (n, d) = dims2(&tx, "gather_rows")?;
        check_indices(idx, n, "gather_rows")?;
        if idx.is_empty() {
            return Err(Error::invalid("gather_rows with no indices"));
        }
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&tx.data()[i * d..(i + 1) * d]);
        }
        let idx = idx.to_vec();
        Ok(self.push(Tensor::from_parts(vec![idx.len(), d], out), &[x], move || {
            Box::new(move |g, _| {
                let mut acc = vec![0.0; n * d];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        acc[i * d + j] += g.data()[r * d + j];
                    }
                }
                vec![Some(Tensor::from_parts(vec![n, d], acc))]
            })
        }))
    }

    /// `out[idx[i]] += x[i]`, producing `[n, d]`.
    pub fn scatter_add_rows(&self, x: Var, idx: &[usize], n: usize) -> Result<Var> {
        let tx = self.value(x);
        let (e, d) = dims2(&tx, "scatter_add_rows")?;
        if idx.len() != e {
            return Err(Error::invalid(format!("scatter_add_rows: {} indices for {e} rows", idx.len())));
        }
        check_indices(idx, n, "scatter_add_rows")?;
        let mut out = vec![0.0; n * d];
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..d {
                out[i * d + j] += tx.data()[r * d + j];
            }
        }
        let idx = idx.to_vec();
        Ok(self.push(Tensor::from_parts(vec![n, d], out), &[x], move || {
            Box::new(move |g, _| {
                let mut back = Vec::with_capacity(e * d);
                for &i in &idx {
                    back.extend_from_slice(&g.data()[i * d..(i + 1) * d]);
                }
                vec![Some(Tensor::from_parts(vec![e, d], back))]
            })
        }))
    }

    /// Scale row `i` of `x[e, d]` by `s[i]` (`s` has `e` entries).
    pub fn mul_rows(&self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        let (e, d) = dims2(&tx, "mul_rows")?;
        if ts.len() != e {
            return Err(Error::shape("mul_rows", tx.shape(), ts.shape()));
        }
        let mut out = tx.to_vec();
        for (row, &sv) in out.chunks_mut(d).zip(ts.data()) {
            row.iter_mut().for_each(|v| *v *= sv);
        }
        let sshape = ts.shape().to_vec();
        Ok(self.push(Tensor::from_parts(vec![e, d], out), &[x, s], move || {
            Box::new(move |g, mask| {
                let gx = mask[0].then(|| {
                    let mut v = g.to_vec();
                    for (row, &sv) in v.chunks_mut(d).zip(ts.data()) {
                        row.iter_mut().for_each(|x| *x *= sv);
                    }
                    Tensor::from_parts(vec![e, d], v)
                });
                let gs = mask[1].then(|| {
                    let v: Vec<f64> = g
                        .data()
                        .chunks(d)
                        .zip(tx.data().chunks(d))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    Tensor::from_parts(sshape.clone(), v)
                });
                vec![gx, gs]
            })
        }))
    }

    /// Softmax of the scalars `x[e]` within each group `seg[i] < nseg`.
    ///
    /// Entries whose logit is `-inf` receive zero weight; a group of only `-inf`
    /// entries yields zeros.
    pub fn segment_softmax(&self, x: Var, seg: &[usize], nseg: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != seg.len() {
            return Err(Error::invalid(format!("segment_softmax: {} segment ids for {} logits", seg.len(), tx.len())));
        }
        check_indices(seg, nseg, "segment_softmax")?;
        let mut mx = vec![f64::NEG_INFINITY; nseg];
        for (&v, &s) in tx.data().iter().zip(seg) {
            mx[s] = mx[s].max(v);
        }
        let mut out: Vec<f64> =
            tx.data().iter().zip(seg).map(|(&v, &s)| if mx[s].is_finite() { (v - mx[s]).exp() } else { 0.0 }).collect();
        let mut z = vec![0.0; nseg];
        for (&v, &s) in out.iter().zip(seg) {
            z[s] += v;
        }
        for (v, &s) in out.iter_mut().zip(seg) {
            if z[s] > 0.0 {
                *v /= z[s];
            }
        }
        let y = Tensor::from_parts(tx.shape().to_vec(), out);
        let yc = y.clone();
        let seg = seg.to_vec();
        Ok(self.push(y, &[x], move || {
            Box::new(move |g, _| {
                let mut dot = vec![0.0; nseg];
                for ((&yv, &gv), &s) in yc.data().iter().zip(g.data()).zip(&seg) {
                    dot[s] += yv * gv;
                }
                let d: Vec<f64> =
                    yc.data().iter().zip(g.data()).zip(&seg).map(|((&yv, &gv), &s)| yv * (gv - dot[s])).collect();
                vec![Some(Tensor::from_parts(yc.shape().to_vec(), d))]
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_zero_bias_passes_input() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5));
        let w = g.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.fully_connected(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn fully_connected_rejects_inner_mismatch() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let w = g.constant(Tensor::zeros(&[4, 3]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.fully_connected(x, w, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn softmax_uniform_logits() {
        let g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 5], 3.7));
        let y = g.value(g.softmax_rows(x).unwrap());
        for v in y.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn segment_softmax_groups_sum_to_one() {
        let g = Graph::new();
        let x = g.constant(Tensor::new(&[5], vec![0.3, -1.0, 2.0, 0.5, f64::NEG_INFINITY]).unwrap());
        let y = g.value(g.segment_softmax(x, &[0, 1, 0, 1, 2], 3).unwrap());
        let d = y.data();
        assert!((d[0] + d[2] - 1.0).abs() < 1e-12);
        assert!((d[1] + d[3] - 1.0).abs() < 1e-12);
        assert_eq!(d[4], 0.0);
    }
}
