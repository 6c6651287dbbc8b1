//! Axis-aligned boxes, IoU, `(tx, ty, tw, th)` deltas and greedy NMS.

use serde::{Deserialize, Serialize};

/// Corner-form box in image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Largest log-size delta accepted when decoding (boxes grow by at most e^4).
pub const MAX_LOG_DELTA: f64 = 4.0;

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }
}

/// Intersection over union; 0 when either box has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (aa, ab) = (a.area(), b.area());
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    inter / (aa + ab - inter)
}

/// Regression target of `target` relative to `anchor`.
pub fn encode_delta(target: &BBox, anchor: &BBox) -> [f64; 4] {
    let (ax, ay) = anchor.center();
    let (tx, ty) = target.center();
    [
        (tx - ax) / anchor.width(),
        (ty - ay) / anchor.height(),
        (target.width() / anchor.width()).ln(),
        (target.height() / anchor.height()).ln(),
    ]
}

/// Inverse of [`encode_delta`]; size deltas are clamped to `±MAX_LOG_DELTA`.
pub fn decode_delta(delta: &[f64; 4], anchor: &BBox) -> BBox {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    BBox::from_center(
        ax + delta[0] * aw,
        ay + delta[1] * ah,
        aw * delta[2].clamp(-MAX_LOG_DELTA, MAX_LOG_DELTA).exp(),
        ah * delta[3].clamp(-MAX_LOG_DELTA, MAX_LOG_DELTA).exp(),
    )
}

/// Greedy non-maximum suppression. Returns kept indices in descending score order
/// (ties keep the earlier index).
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64, max_keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len().min(scores.len())).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.len() >= max_keep {
            break;
        }
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) < iou_threshold) {
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&a, &BBox::new(1.0, 0.0, 3.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &BBox::new(1.0, 1.0, 1.0, 3.0)), 0.0);
    }

    #[test]
    fn nms_keeps_higher_of_duplicates() {
        let b = BBox::new(0.0, 0.0, 4.0, 4.0);
        assert_eq!(nms(&[b, b], &[0.3, 0.9], 0.5, 10), vec![1]);
        assert_eq!(nms(&[b], &[0.1], 0.5, 10), vec![0]);
    }

    proptest! {
        #[test]
        fn delta_round_trip(cx in -50.0..150.0f64, cy in -50.0..150.0f64, w in 2.0..80.0f64, h in 2.0..80.0f64,
                            acx in 0.0..128.0f64, acy in 0.0..128.0f64, aw in 4.0..64.0f64, ah in 4.0..64.0f64) {
            let t = BBox::from_center(cx, cy, w, h);
            let a = BBox::from_center(acx, acy, aw, ah);
            let back = decode_delta(&encode_delta(&t, &a), &a);
            prop_assert!((back.x1 - t.x1).abs() < 1e-9 && (back.y1 - t.y1).abs() < 1e-9);
            prop_assert!((back.x2 - t.x2).abs() < 1e-9 && (back.y2 - t.y2).abs() < 1e-9);
        }

        #[test]
        fn nms_output_is_separated(raw in proptest::collection::vec((0.0..100.0f64, 0.0..100.0f64, 2.0..30.0f64, 0.0..1.0f64), 0..30)) {
            let boxes: Vec<BBox> = raw.iter().map(|&(x, y, s, _)| BBox::new(x, y, x + s, y + s)).collect();
            let scores: Vec<f64> = raw.iter().map(|r| r.3).collect();
            let keep = nms(&boxes, &scores, 0.5, usize::MAX);
            for (i, &a) in keep.iter().enumerate() {
                for &b in &keep[i + 1..] {
                    prop_assert!(iou(&boxes[a], &boxes[b]) < 0.5);
                }
            }
        }
    }
}
