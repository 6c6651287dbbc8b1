//! Region proposal network shared across pyramid levels: anchors, assignment,
//! sampling, the objectness + box-regression loss and proposal decoding.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::boxes::{decode_delta, encode_delta, iou, nms, BBox};
use crate::codec::complexity::{CountOps, LayerOp};
use crate::error::{Error, Result};
use crate::numeric::{Conv, Graph, ParameterStore, Tensor, Var, LEAKY_SLOPE};
use crate::pyramid::{Pyramid, FINEST_STRIDE};

/// Aspect ratios `h / w` of the anchors at every cell.
pub const ASPECT_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];

/// Anchors of one level in `[a, y, x]` order, matching the head's output layout.
pub fn level_anchors(size: usize, stride: usize, base: f64) -> Vec<BBox> {
    let mut out = Vec::with_capacity(ASPECT_RATIOS.len() * size * size);
    for r in ASPECT_RATIOS {
        let (w, h) = (base / r.sqrt(), base * r.sqrt());
        for y in 0..size {
            for x in 0..size {
                let s = stride as f64;
                out.push(BBox::from_center((x as f64 + 0.5) * s, (y as f64 + 0.5) * s, w, h));
            }
        }
    }
    out
}

/// Anchors for all levels, concatenated finest first. Level `i` has stride
/// `4·2^i` and anchor size `scale · stride`.
pub fn pyramid_anchors(sizes: &[usize], scale: f64) -> Vec<Vec<BBox>> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let stride = FINEST_STRIDE << i;
            level_anchors(s, stride, scale * stride as f64)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Matched to ground-truth index.
    Positive(usize),
    Negative,
    Ignore,
}

/// Positive when IoU ≥ `hi` with some box or when the anchor attains a box's best
/// IoU; negative when the best IoU is ≤ `lo`; otherwise ignored.
pub fn assign_anchors(anchors: &[BBox], truths: &[BBox], hi: f64, lo: f64) -> Vec<AnchorLabel> {
    if truths.is_empty() {
        return vec![AnchorLabel::Negative; anchors.len()];
    }
    let table: Vec<Vec<f64>> = anchors.iter().map(|a| truths.iter().map(|t| iou(a, t)).collect()).collect();
    let best_for_truth: Vec<f64> =
        (0..truths.len()).map(|j| table.iter().map(|row| row[j]).fold(0.0, f64::max)).collect();
    table
        .iter()
        .map(|row| {
            let (j, &best) =
                row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).expect("non-empty truths");
            if best >= hi {
                return AnchorLabel::Positive(j);
            }
            let argmax_of = row
                .iter()
                .enumerate()
                .filter(|&(k, &v)| v > 0.0 && v == best_for_truth[k])
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)));
            if let Some((k, _)) = argmax_of {
                AnchorLabel::Positive(k)
            } else if best <= lo {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect()
}

/// Draw up to `batch` anchors with at most `batch · positive_fraction` positives;
/// negatives fill the rest. Returned indices are sorted.
pub fn sample_anchors<R: Rng + ?Sized>(
    labels: &[AnchorLabel],
    batch: usize,
    positive_fraction: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| matches!(labels[i], AnchorLabel::Positive(_))).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == AnchorLabel::Negative).collect();
    let max_pos = ((batch as f64 * positive_fraction).round() as usize).min(batch);
    pos.shuffle(rng);
    pos.truncate(max_pos);
    neg.shuffle(rng);
    neg.truncate(batch - pos.len());
    let mut out = pos;
    out.extend(neg);
    out.sort_unstable();
    out
}

impl Graph {
    /// `(1/N_cls)·Σ log_loss(p_i, p*_i) + λ·(1/N_reg)·Σ p*_i·smooth_l1(t_i, t*_i)`.
    ///
    /// `p` is `[N]` probabilities, `t` and `t_star` are `[N, 4]`; only rows with
    /// `p*_i = 1` enter the regression sum. A zero normalizer drops its term.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_total(
        &self,
        p: Var,
        p_star: &[f64],
        t: Var,
        t_star: &Tensor,
        lambda: f64,
        n_cls: usize,
        n_reg: usize,
    ) -> Result<Var> {
        let n = p_star.len();
        if self.shape(p) != [n] || self.shape(t) != [n, 4] || t_star.shape() != [n, 4] {
            return Err(Error::shape("loss_total", &self.shape(t), t_star.shape()));
        }
        let mut terms = Vec::new();
        if n_cls > 0 && n > 0 {
            let cls = self.log_loss(p, p_star)?;
            terms.push(self.scale(cls, 1.0 / n_cls as f64));
        }
        let positives: Vec<usize> = (0..n).filter(|&i| p_star[i] == 1.0).collect();
        if n_reg > 0 && !positives.is_empty() {
            let ti = self.gather_rows(t, &positives)?;
            let rows: Vec<f64> = positives.iter().flat_map(|&i| t_star.data()[i * 4..i * 4 + 4].to_vec()).collect();
            let target = self.constant(Tensor::from_parts(vec![positives.len(), 4], rows));
            let reg = self.smooth_l1(ti, target)?;
            terms.push(self.scale(reg, lambda / n_reg as f64));
        }
        if terms.is_empty() {
            return Ok(self.constant(Tensor::scalar(0.0)));
        }
        self.add_n(&terms)
    }
}

/// Shared 3x3 conv + leaky ReLU, then 1x1 convs giving `A` objectness logits and
/// `4A` deltas per cell. Parameters under `rpn.`.
#[derive(Clone, Debug, PartialEq)]
pub struct RpnHead {
    pub channels: usize,
    pub anchors: usize,
}

/// Raw head outputs for one level: objectness `[B, A, H, W]`, deltas `[B, 4A, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct RpnLevel {
    pub objectness: Var,
    pub deltas: Var,
}

impl RpnHead {
    pub fn new(channels: usize) -> Self {
        RpnHead { channels, anchors: ASPECT_RATIOS.len() }
    }

    fn shared(&self) -> Conv {
        Conv::new(self.channels, self.channels, 3, 1, 1)
    }

    fn cls(&self) -> Conv {
        Conv::new(self.channels, self.anchors, 1, 1, 0)
    }

    fn reg(&self) -> Conv {
        Conv::new(self.channels, 4 * self.anchors, 1, 1, 0)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.shared().init(store, "rpn.conv", rng)?;
        self.cls().init(store, "rpn.cls", rng)?;
        self.reg().init(store, "rpn.reg", rng)?;
        // Small regression weights so initial proposals stay close to their anchors.
        let w = store.get("rpn.reg.w")?.scale(0.1);
        store.set("rpn.reg.w", w)
    }

    pub fn forward_level(&self, g: &Graph, store: &ParameterStore, x: Var) -> Result<RpnLevel> {
        let h = self.shared().forward(g, store, "rpn.conv", x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        Ok(RpnLevel {
            objectness: self.cls().forward(g, store, "rpn.cls", h)?,
            deltas: self.reg().forward(g, store, "rpn.reg", h)?,
        })
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, pyramid: &Pyramid) -> Result<Vec<RpnLevel>> {
        pyramid.levels.iter().map(|&x| self.forward_level(g, store, x)).collect()
    }

    pub fn layer_ops_for(&self, sizes: &[usize]) -> Vec<LayerOp> {
        sizes.iter().flat_map(|&s| [self.shared().op(s, s), self.cls().op(s, s), self.reg().op(s, s)]).collect()
    }
}

/// Geometry-bound head, for complexity counting.
pub struct RpnGeometry<'a> {
    pub head: &'a RpnHead,
    pub sizes: &'a [usize],
}

impl CountOps for RpnGeometry<'_> {
    fn layer_ops(&self) -> Vec<LayerOp> {
        self.head.layer_ops_for(self.sizes)
    }
}

/// Flat offsets of anchor `a` (in level order) for image `b` within the objectness
/// tensor and of its 4 delta coordinates within the delta tensor.
pub fn anchor_offsets(shape: &[usize], b: usize, anchor: usize) -> (usize, [usize; 4]) {
    let (na, h, w) = (shape[1], shape[2], shape[3]);
    let hw = h * w;
    let (a, cell) = (anchor / hw, anchor % hw);
    let obj = (b * na + a) * hw + cell;
    let base = b * 4 * na * hw;
    let d = |c: usize| base + (a * 4 + c) * hw + cell;
    (obj, [d(0), d(1), d(2), d(3)])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    pub pre_nms: usize,
    pub nms_iou: f64,
    pub post_nms: usize,
    /// Boxes narrower or shorter than this many pixels are dropped.
    pub min_size: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig { pre_nms: 300, nms_iou: 0.7, post_nms: 32, min_size: 2.0 }
    }
}

/// Score, decode, clip and suppress anchors of image `b`. Inputs are the per-level
/// objectness logits and deltas as tensors.
pub fn propose(
    objectness: &[Tensor],
    deltas: &[Tensor],
    anchors: &[Vec<BBox>],
    b: usize,
    image_size: f64,
    config: &ProposalConfig,
) -> Vec<(BBox, f64)> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (l, obj) in objectness.iter().enumerate() {
        for a in 0..anchors[l].len() {
            let (o, _) = anchor_offsets(obj.shape(), b, a);
            cands.push((obj.data()[o], l, a));
        }
    }
    cands.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    cands.truncate(config.pre_nms);
    let mut boxes = Vec::with_capacity(cands.len());
    let mut scores = Vec::with_capacity(cands.len());
    for &(logit, l, a) in &cands {
        let (_, d) = anchor_offsets(objectness[l].shape(), b, a);
        let dt = deltas[l].data();
        let bx = decode_delta(&[dt[d[0]], dt[d[1]], dt[d[2]], dt[d[3]]], &anchors[l][a]).clip(image_size, image_size);
        if bx.width() >= config.min_size && bx.height() >= config.min_size {
            boxes.push(bx);
            scores.push(1.0 / (1.0 + (-logit).exp()));
        }
    }
    nms(&boxes, &scores, config.nms_iou, config.post_nms).into_iter().map(|i| (boxes[i], scores[i])).collect()
}

/// Regression targets `[4]` of every positive anchor relative to its matched box.
pub fn regression_target(anchor: &BBox, truth: &BBox) -> [f64; 4] {
    encode_delta(truth, anchor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn assignment_rules() {
        let gt = [BBox::new(10.0, 10.0, 30.0, 30.0)];
        let anchors =
            [BBox::new(10.0, 10.0, 30.0, 30.0), BBox::new(80.0, 80.0, 100.0, 100.0), BBox::new(14.0, 10.0, 34.0, 30.0)];
        let labels = assign_anchors(&anchors, &gt, 0.7, 0.3);
        assert_eq!(labels[0], AnchorLabel::Positive(0));
        assert_eq!(labels[1], AnchorLabel::Negative);
        // IoU 16·20 / (2·400 − 320) = 2/3: between thresholds and not the argmax.
        assert_eq!(labels[2], AnchorLabel::Ignore);
    }

    #[test]
    fn anchor_counts() {
        let a = pyramid_anchors(&[32, 16, 8, 4, 2], 2.0);
        assert_eq!(a[0].len(), 3 * 32 * 32);
        assert_eq!(a[4].len(), 12);
        let (cx, cy) = a[0][0].center();
        assert!((cx - 2.0).abs() < 1e-12 && (cy - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_respects_budget() {
        let mut labels = vec![AnchorLabel::Negative; 100];
        for l in labels.iter_mut().take(40) {
            *l = AnchorLabel::Positive(0);
        }
        let s = sample_anchors(&labels, 32, 0.5, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.len(), 32);
        assert_eq!(s.iter().filter(|&&i| i < 40).count(), 16);
    }

    #[test]
    fn all_negative_loss_is_classification_only() {
        let g = Graph::new();
        let p = g.constant(Tensor::new(&[2], vec![0.2, 0.4]).unwrap());
        let t = g.constant(Tensor::ones(&[2, 4]));
        let l = g.loss_total(p, &[0.0, 0.0], t, &Tensor::zeros(&[2, 4]), 1.0, 2, 0).unwrap();
        let want = -((0.8f64).ln() + (0.6f64).ln()) / 2.0;
        assert!((g.value(l).item() - want).abs() < 1e-12);
    }
}
