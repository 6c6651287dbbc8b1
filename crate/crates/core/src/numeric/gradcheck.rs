//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values (on an inference graph), so it
//! is independent of every backward closure it verifies.

use super::graph::{Graph, Var};
use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative errors use `max(|analytic|, |numeric|, SCALE_FLOOR)` as denominator so that
/// exactly-zero gradients compare on an absolute scale.
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat element, analytic, numeric)` of the worst element.
    pub worst: (usize, usize, f64, f64),
    pub checked: usize,
    /// [`Graph::kink_margin`] at the unperturbed inputs. A step larger than this may
    /// straddle a non-differentiable point.
    pub kink_margin: f64,
}

/// Compare analytic and central-difference gradients of the scalar `f(inputs)`.
///
/// `f` receives a fresh graph and one var per input tensor, and must return a scalar.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().zip(inputs).map(|(&v, t)| grads.get_or_zeros(v, t.shape())).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let g = Graph::inference();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let v = g.value(f(&g, &vars)?);
        if v.len() != 1 {
            return Err(Error::invalid("gradient check needs a scalar function"));
        }
        Ok(v.item())
    };

    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst: (0, 0, 0.0, 0.0), checked: 0, kink_margin: g.kink_margin() };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let mut plus = input.to_vec();
            plus[e] += step;
            let mut minus = input.to_vec();
            minus[e] -= step;
            work[ii] = Tensor::from_parts(input.shape().to_vec(), plus);
            let fp = eval(&work)?;
            work[ii] = Tensor::from_parts(input.shape().to_vec(), minus);
            let fm = eval(&work)?;
            work[ii] = input.clone();
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[ii].data()[e];
            let denom = a.abs().max(numeric.abs()).max(SCALE_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (ii, e, a, numeric);
            }
        }
    }
    Ok(report)
}

/// Like [`check_gradients`], but `f` may also read parameters from `store`; every
/// parameter element is checked along with the inputs. In the report, indices past
/// `inputs.len()` refer to parameters in name order.
pub fn check_gradients_with_store<F>(
    inputs: &[Tensor],
    store: &ParameterStore,
    step: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &ParameterStore, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, store, &vars)?;
    let grads = g.backward(out)?;
    let mut analytic: Vec<Vec<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| grads.get_or_zeros(v, t.shape()).into_vec()).collect();
    let mut acc = store.clone();
    acc.zero_grad();
    acc.accumulate(&g, &grads)?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in &names {
        analytic.push(acc.grad(n)?.to_vec());
    }

    let eval = |xs: &[Tensor], s: &ParameterStore| -> Result<f64> {
        let g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let v = g.value(f(&g, s, &vars)?);
        if v.len() != 1 {
            return Err(Error::invalid("gradient check needs a scalar function"));
        }
        Ok(v.item())
    };

    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst: (0, 0, 0.0, 0.0), checked: 0, kink_margin: g.kink_margin() };
    let mut record = |slot: usize, e: usize, a: f64, numeric: f64| {
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(SCALE_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = rel;
            report.worst = (slot, e, a, numeric);
        }
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let mut d = input.to_vec();
            d[e] += step;
            work[ii] = Tensor::from_parts(input.shape().to_vec(), d.clone());
            let fp = eval(&work, store)?;
            d[e] -= 2.0 * step;
            work[ii] = Tensor::from_parts(input.shape().to_vec(), d);
            let fm = eval(&work, store)?;
            work[ii] = input.clone();
            record(ii, e, analytic[ii][e], (fp - fm) / (2.0 * step));
        }
    }
    let mut perturbed = store.clone();
    for (pi, n) in names.iter().enumerate() {
        let value = store.get(n)?.clone();
        for e in 0..value.len() {
            let mut d = value.to_vec();
            d[e] += step;
            perturbed.set(n, Tensor::from_parts(value.shape().to_vec(), d.clone()))?;
            let fp = eval(inputs, &perturbed)?;
            d[e] -= 2.0 * step;
            perturbed.set(n, Tensor::from_parts(value.shape().to_vec(), d))?;
            let fm = eval(inputs, &perturbed)?;
            perturbed.set(n, value.clone())?;
            let slot = inputs.len() + pi;
            record(slot, e, analytic[slot][e], (fp - fm) / (2.0 * step));
        }
    }
    Ok(report)
}
