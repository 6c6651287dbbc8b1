//! Differentiable transmission of encoded features through the channel model.
//!
//! Noise is sampled in the forward pass and treated as a constant input during the
//! backward pass; the transmitted signal is linear in its input apart from the power
//! normalization, whose exact Jacobian is used.

use num_complex::Complex64;

use crate::channel::{self, ChannelConfig, ComplexSignal};
use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};

fn rows(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::shape(op, s, &[0, 0])),
    }
}

impl Graph {
    /// Scale each row of `x[B, L]` to average complex-sample power `power`, where the
    /// row is read as `ceil(L/2)` complex samples.
    pub fn power_normalize_rows(&self, x: Var, power: f64) -> Result<Var> {
        let t = self.value(x);
        let (b, l) = rows(&t, "power_normalize_rows")?;
        let k = l.div_ceil(2) as f64;
        let mut out = Vec::with_capacity(b * l);
        let mut norms = Vec::with_capacity(b);
        for row in t.data().chunks(l) {
            let z = channel::to_complex(&Tensor::from_parts(vec![l], row.to_vec()));
            let zn = channel::power_normalize(&z, power)?;
            out.extend(channel::from_complex(&zn, &[l])?.into_vec());
            norms.push(row.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        let scale = (k * power).sqrt();
        Ok(self.push(Tensor::from_parts(vec![b, l], out), &[x], move || {
            Box::new(move |g, _| {
                let mut d = Vec::with_capacity(b * l);
                for ((xr, gr), &nrm) in t.data().chunks(l).zip(g.data().chunks(l)).zip(&norms) {
                    let xg: f64 = xr.iter().zip(gr).map(|(a, c)| a * c).sum();
                    let c = scale / nrm;
                    d.extend(xr.iter().zip(gr).map(|(&xv, &gv)| c * (gv - xv * xg / (nrm * nrm))));
                }
                vec![Some(Tensor::from_parts(vec![b, l], d))]
            })
        }))
    }

    /// Send every row of `x[B, L]` through the channel as its own block, with `seeds[r]`.
    /// Returns the received rows and each row's fading gain.
    pub fn channel_rows(&self, x: Var, config: &ChannelConfig, seeds: &[u64]) -> Result<(Var, Vec<Complex64>)> {
        let t = self.value(x);
        let (b, l) = rows(&t, "channel_rows")?;
        if seeds.len() != b {
            return Err(Error::invalid(format!("{} seeds for {b} rows", seeds.len())));
        }
        let mut out = Vec::with_capacity(b * l);
        let mut gains = Vec::with_capacity(b);
        let mut effective = Vec::with_capacity(b);
        for (row, &seed) in t.data().chunks(l).zip(seeds) {
            let z: ComplexSignal = channel::to_complex(&Tensor::from_parts(vec![l], row.to_vec()));
            let tx = channel::transmit(&z, config, seed)?;
            out.extend(channel::from_complex(&tx.received, &[l])?.into_vec());
            gains.push(tx.gain);
            effective.push(tx.effective_gain);
        }
        let var = self.push(Tensor::from_parts(vec![b, l], out), &[x], move || {
            Box::new(move |g, _| {
                // Adjoint of multiplication by h is multiplication by conj(h).
                let mut d = vec![0.0; b * l];
                for (r, h) in effective.iter().enumerate() {
                    let gr = &g.data()[r * l..(r + 1) * l];
                    let dr = &mut d[r * l..(r + 1) * l];
                    for j in (0..l).step_by(2) {
                        let gre = gr[j];
                        let gim = if j + 1 < l { gr[j + 1] } else { 0.0 };
                        let v = h.conj() * Complex64::new(gre, gim);
                        dr[j] = v.re;
                        if j + 1 < l {
                            dr[j + 1] = v.im;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![b, l], d))]
            })
        });
        Ok((var, gains))
    }

    /// Columns `[start, end)` of `x[n, d]`.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (n, d) = rows(&t, "slice_cols")?;
        if start >= end || end > d {
            return Err(Error::invalid(format!("slice_cols [{start}, {end}) of width {d}")));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(n * w);
        for r in 0..n {
            out.extend_from_slice(&t.data()[r * d + start..r * d + end]);
        }
        Ok(self.push(Tensor::from_parts(vec![n, w], out), &[x], move || {
            Box::new(move |g, _| {
                let mut full = vec![0.0; n * d];
                for r in 0..n {
                    full[r * d + start..r * d + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                vec![Some(Tensor::from_parts(vec![n, d], full))]
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;

    #[test]
    fn normalized_rows_have_unit_power() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[3, 7], |i| (i as f64 * 0.7).sin() + 0.1));
        let y = g.value(g.power_normalize_rows(x, 2.0).unwrap());
        for row in y.data().chunks(7) {
            let p: f64 = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((p - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_channel_is_identity() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 6], |i| i as f64));
        let cfg = ChannelConfig::noiseless(ChannelKind::Rayleigh, 1.0).unwrap();
        let (y, gains) = g.channel_rows(x, &cfg, &[1, 2]).unwrap();
        assert_eq!(gains.len(), 2);
        assert!(g.value(y).max_abs_diff(&g.value(x)) < 1e-12);
    }
}
