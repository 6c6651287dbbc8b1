//! Mean average precision with greedy score-ordered matching and all-point
//! interpolation.

use serde::{Deserialize, Serialize};

use super::boxes::{iou, BBox};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: usize,
    /// Foreground class index (0-based, background excluded).
    pub class: usize,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: usize,
    pub class: usize,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapReport {
    /// `None` for classes without ground truth.
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

/// Area under the monotone precision envelope of a PR curve, summed over recall steps.
fn all_point_ap(tp: &[bool], n_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        if t {
            hits += 1;
        }
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Per-class AP over `classes` foreground classes and their unweighted mean. Classes
/// without ground truth are excluded from the mean; with no ground truth at all the
/// mean is 0.
pub fn mean_average_precision(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    classes: usize,
    iou_threshold: f64,
) -> MapReport {
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let gts: Vec<&GroundTruth> = ground_truths.iter().filter(|g| g.class == c).collect();
        if gts.is_empty() {
            per_class.push(None);
            continue;
        }
        let mut dets: Vec<&Detection> = detections.iter().filter(|d| d.class == c).collect();
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut matched = vec![false; gts.len()];
        let tp: Vec<bool> = dets
            .iter()
            .map(|d| {
                let best = gts
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.image_id == d.image_id)
                    .map(|(j, g)| (j, iou(&d.bbox, &g.bbox)))
                    .filter(|&(j, o)| o >= iou_threshold && !matched[j])
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                match best {
                    Some((j, _)) => {
                        matched[j] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        per_class.push(Some(all_point_ap(&tp, gts.len())));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    MapReport { per_class, map }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(score: f64, b: BBox) -> Detection {
        Detection { image_id: 0, class: 0, score, bbox: b }
    }

    const GT: BBox = BBox::new(0.0, 0.0, 10.0, 10.0);
    const FAR: BBox = BBox::new(50.0, 50.0, 60.0, 60.0);

    #[test]
    fn ordering_cases() {
        let gt = [GroundTruth { image_id: 0, class: 0, bbox: GT }];
        let tp_first = mean_average_precision(&[det(0.9, GT), det(0.1, FAR)], &gt, 1, 0.5);
        assert_eq!(tp_first.map, 1.0);
        let fp_first = mean_average_precision(&[det(0.9, FAR), det(0.1, GT)], &gt, 1, 0.5);
        assert_eq!(fp_first.map, 0.5);
        assert_eq!(mean_average_precision(&[], &gt, 1, 0.5).map, 0.0);
    }

    #[test]
    fn classes_without_truth_are_excluded() {
        let gt = [GroundTruth { image_id: 0, class: 1, bbox: GT }];
        let d = Detection { image_id: 0, class: 1, score: 1.0, bbox: GT };
        let r = mean_average_precision(&[d], &gt, 3, 0.5);
        assert_eq!(r.per_class, vec![None, Some(1.0), None]);
        assert_eq!(r.map, 1.0);
    }
}
