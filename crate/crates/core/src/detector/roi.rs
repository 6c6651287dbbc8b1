//! Bilinear region pooling from the pyramid level matched to each box's scale.

use super::boxes::BBox;
use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};
use crate::pyramid::{FINEST_STRIDE, LEVELS};

/// Pyramid level (2..=6) for a box: `floor(4 + log2(sqrt(area) / canonical))`, clamped.
/// `canonical` is the box side that maps to level 4.
pub fn roi_level(bbox: &BBox, canonical: f64) -> usize {
    let side = bbox.area().sqrt().max(1e-6);
    let k = (4.0 + (side / canonical).log2()).floor();
    k.clamp(2.0, (LEVELS + 1) as f64) as usize
}

/// Bilinear taps `(flat index within a [H, W] plane, weight)` for one sample point in
/// feature coordinates, clamped to the map.
fn taps(fy: f64, fx: f64, h: usize, w: usize) -> [(usize, f64); 4] {
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
    [
        (y0 * w + x0, (1.0 - dy) * (1.0 - dx)),
        (y0 * w + x1, (1.0 - dy) * dx),
        (y1 * w + x0, dy * (1.0 - dx)),
        (y1 * w + x1, dy * dx),
    ]
}

/// Sample points of an `out x out` grid at bin centers of `bbox`, mapped to a level of
/// the given stride (pixel centers at `(i + 0.5) · stride`).
fn grid(bbox: &BBox, stride: f64, out: usize) -> Vec<(f64, f64)> {
    let (bw, bh) = (bbox.width() / out as f64, bbox.height() / out as f64);
    let mut pts = Vec::with_capacity(out * out);
    for i in 0..out {
        for j in 0..out {
            let y = bbox.y1 + (i as f64 + 0.5) * bh;
            let x = bbox.x1 + (j as f64 + 0.5) * bw;
            pts.push((y / stride - 0.5, x / stride - 0.5));
        }
    }
    pts
}

struct Plan {
    level: usize,
    batch: usize,
    /// Per grid point, four taps.
    taps: Vec<[(usize, f64); 4]>,
}

impl Graph {
    /// Pool each `(image, box)` into a `C · out · out` row. `levels` are the five
    /// `[B, C, s_i, s_i]` maps; the box picks its level with [`roi_level`].
    pub fn roi_pool(&self, levels: &[Var], rois: &[(usize, BBox)], out: usize, canonical: f64) -> Result<Var> {
        if levels.len() != LEVELS || out == 0 {
            return Err(Error::invalid(format!(
                "roi_pool needs {LEVELS} levels and a positive grid, got {} / {out}",
                levels.len()
            )));
        }
        let values: Vec<Tensor> = levels.iter().map(|&v| self.value(v)).collect();
        let shapes: Vec<Vec<usize>> = values.iter().map(|t| t.shape().to_vec()).collect();
        let (nb, c) = (shapes[0][0], shapes[0][1]);
        let mut plans = Vec::with_capacity(rois.len());
        for &(b, bbox) in rois {
            if b >= nb {
                return Err(Error::invalid(format!("roi for image {b} in a batch of {nb}")));
            }
            let level = roi_level(&bbox, canonical) - 2;
            let (h, w) = (shapes[level][2], shapes[level][3]);
            let stride = (FINEST_STRIDE << level) as f64;
            let taps = grid(&bbox, stride, out).into_iter().map(|(fy, fx)| taps(fy, fx, h, w)).collect();
            plans.push(Plan { level, batch: b, taps });
        }
        let cols = c * out * out;
        let mut data = vec![0.0; rois.len() * cols];
        for (r, plan) in plans.iter().enumerate() {
            let sh = &shapes[plan.level];
            let plane = sh[2] * sh[3];
            let src = values[plan.level].data();
            for ch in 0..c {
                let base = (plan.batch * c + ch) * plane;
                for (p, tp) in plan.taps.iter().enumerate() {
                    data[r * cols + ch * out * out + p] = tp.iter().map(|&(i, wt)| wt * src[base + i]).sum();
                }
            }
        }
        let n = rois.len();
        Ok(self.push(Tensor::from_parts(vec![n, cols], data), levels, move || {
            Box::new(move |g, needs| {
                let mut grads: Vec<Vec<f64>> = shapes
                    .iter()
                    .enumerate()
                    .map(|(l, s)| if needs[l] { vec![0.0; s.iter().product()] } else { Vec::new() })
                    .collect();
                for (r, plan) in plans.iter().enumerate() {
                    if !needs[plan.level] {
                        continue;
                    }
                    let sh = &shapes[plan.level];
                    let plane = sh[2] * sh[3];
                    let dst = &mut grads[plan.level];
                    for ch in 0..c {
                        let base = (plan.batch * c + ch) * plane;
                        for (p, tp) in plan.taps.iter().enumerate() {
                            let gv = g.data()[r * cols + ch * out * out + p];
                            for &(i, wt) in tp {
                                dst[base + i] += wt * gv;
                            }
                        }
                    }
                }
                grads
                    .into_iter()
                    .zip(&shapes)
                    .enumerate()
                    .map(|(l, (d, s))| needs[l].then(|| Tensor::from_parts(s.clone(), d)))
                    .collect()
            })
        }))
    }
}
