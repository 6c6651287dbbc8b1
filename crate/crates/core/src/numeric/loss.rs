//! Loss primitives: binary log loss, smooth L1, and softmax cross-entropy.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped into `(LOG_LOSS_EPS, 1 - LOG_LOSS_EPS)` before the log.
pub const LOG_LOSS_EPS: f64 = 1e-7;

/// `-[y ln p + (1 - y) ln(1 - p)]` with `p` clamped into `(eps, 1 - eps)`.
pub fn log_loss(p: f64, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("log_loss: probability {p} outside [0, 1]")));
    }
    if target != 0.0 && target != 1.0 {
        return Err(Error::invalid(format!("log_loss: label {target} is not 0 or 1")));
    }
    let pc = p.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS);
    Ok(-(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln()))
}

fn log_loss_grad(p: f64, target: f64) -> f64 {
    if p <= LOG_LOSS_EPS || p >= 1.0 - LOG_LOSS_EPS {
        0.0
    } else {
        -target / p + (1.0 - target) / (1.0 - p)
    }
}

/// Elementwise smooth L1: `0.5 x^2` for `|x| < 1`, else `|x| - 0.5`.
pub fn smooth_l1_scalar(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Summed smooth L1 between two equally shaped tensors.
pub fn smooth_l1(t: &Tensor, t_star: &Tensor) -> Result<f64> {
    if t.shape() != t_star.shape() {
        return Err(Error::shape("smooth_l1", t.shape(), t_star.shape()));
    }
    Ok(t.data().iter().zip(t_star.data()).map(|(a, b)| smooth_l1_scalar(a - b)).sum())
}

impl Graph {
    /// Summed log loss of probabilities `p` against 0/1 `targets`.
    pub fn log_loss(&self, p: Var, targets: &[f64]) -> Result<Var> {
        let tp = self.value(p);
        if tp.len() != targets.len() {
            return Err(Error::shape("log_loss", tp.shape(), &[targets.len()]));
        }
        let mut total = 0.0;
        for (&pv, &y) in tp.data().iter().zip(targets) {
            total += log_loss(pv, y)?;
        }
        let targets = targets.to_vec();
        Ok(self.push(Tensor::scalar(total), &[p], move || {
            Box::new(move |g, _| {
                let gv = g.item();
                let d: Vec<f64> = tp.data().iter().zip(&targets).map(|(&pv, &y)| gv * log_loss_grad(pv, y)).collect();
                vec![Some(Tensor::from_parts(tp.shape().to_vec(), d))]
            })
        }))
    }

    /// Summed smooth L1 of `t - t_star`.
    pub fn smooth_l1(&self, t: Var, t_star: Var) -> Result<Var> {
        let (a, b) = (self.value(t), self.value(t_star));
        let total = smooth_l1(&a, &b)?;
        Ok(self.push(Tensor::scalar(total), &[t, t_star], move || {
            Box::new(move |g, mask| {
                let gv = g.item();
                let d = a.zip_map(&b, |x, y| gv * smooth_l1_grad(x - y)).expect("shape");
                let neg = mask[1].then(|| d.scale(-1.0));
                vec![mask[0].then_some(d), neg]
            })
        }))
    }

    /// Summed `-log softmax(logits)[label]` over rows of `logits[n, e]`.
    pub fn softmax_cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape("softmax_cross_entropy", &shape, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= shape[1]) {
            return Err(Error::invalid(format!("softmax_cross_entropy: label {bad} out of {} classes", shape[1])));
        }
        let e = shape[1];
        let idx: Vec<usize> = labels.iter().enumerate().map(|(r, &l)| r * e + l).collect();
        let logp = self.log_softmax_rows(logits)?;
        let picked = self.gather_flat(logp, &idx)?;
        let s = self.sum(picked);
        Ok(self.scale(s, -1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_loss_reference_points() {
        assert!(log_loss(1.0, 1.0).unwrap() < 1e-6);
        assert!((log_loss(0.5, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((log_loss(0.5, 0.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(log_loss(1.2, 1.0).is_err());
        assert!(log_loss(-0.1, 0.0).is_err());
    }

    #[test]
    fn smooth_l1_reference_points() {
        assert_eq!(smooth_l1_scalar(0.5), 0.125);
        assert_eq!(smooth_l1_scalar(2.0), 1.5);
        assert_eq!(smooth_l1_scalar(-2.0), 1.5);
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        assert!(matches!(smooth_l1(&a, &b), Err(Error::ShapeMismatch { .. })));
    }
}
