//! Detection quality of a trained pipeline over an evaluation set.

use super::model::{Link, Model};
use super::world::Dataset;
use crate::channel::ChannelConfig;
use crate::detector::{mean_average_precision, Detection, MapReport};
use crate::error::{Error, Result};
use crate::kg::EmbeddingTable;
use crate::numeric::{Graph, ParameterStore, Tensor};
use crate::seeds::mix_seed;

/// Images per inference batch.
pub const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub initial: MapReport,
    pub initial_detections: Vec<Detection>,
    /// Present when the graph head was evaluated.
    pub refined: Option<MapReport>,
    pub refined_detections: Vec<Detection>,
}

/// Detections for a batch `[B, 3, S, S]` of images in [0, 1], sent over `channel`
/// with one seed per image. `image_ids` label the detections. The refined set is
/// present when `embeddings` are given.
pub fn detect_batch(
    model: &Model,
    store: &ParameterStore,
    images: &Tensor,
    image_ids: &[usize],
    channel: &ChannelConfig,
    seeds: &[u64],
    embeddings: Option<&EmbeddingTable>,
) -> Result<(Vec<Detection>, Option<Vec<Detection>>)> {
    let s = model.image_size();
    let b = image_ids.len();
    if images.shape() != [b, 3, s, s] || seeds.len() != b {
        return Err(Error::shape("detect_batch", images.shape(), &[b, 3, s, s]));
    }
    let g = Graph::inference();
    let pyramid = model.pyramid(&g, store, images, Some(Link { channel, seeds }))?;
    let levels = model.rpn_forward(&g, store, &pyramid)?;
    let proposals = model.proposals(&g, &levels, b, false);
    let rois: Vec<_> = proposals.iter().enumerate().flat_map(|(b, ps)| ps.iter().map(move |p| (b, p.0))).collect();
    if rois.is_empty() {
        return Ok((Vec::new(), embeddings.map(|_| Vec::new())));
    }
    let out = model.regions(&g, store, &pyramid, rois, embeddings)?;
    let p0 = g.value(g.softmax_rows(out.initial_logits)?);
    let initial = model.detections(&out.rois, &p0, image_ids);
    let refined = match out.final_logits {
        Some(fl) => Some(model.detections(&out.rois, &g.value(g.softmax_rows(fl)?), image_ids)),
        None => None,
    };
    Ok((initial, refined))
}

/// Run every image of `data` through the pipeline. Image `i` sees channel
/// realizations seeded by `mix_seed(seed, [i])`, independent of batching. With
/// `embeddings`, both the initial and the refined classifications are scored from the
/// same forward pass.
pub fn evaluate(
    model: &Model,
    store: &ParameterStore,
    data: &Dataset,
    channel: &ChannelConfig,
    seed: u64,
    embeddings: Option<&EmbeddingTable>,
    iou_threshold: f64,
) -> Result<EvalResult> {
    if data.image_size != model.image_size() {
        return Err(Error::Config(format!(
            "dataset images are {} pixels but the model expects {}",
            data.image_size,
            model.image_size()
        )));
    }
    let mut initial = Vec::new();
    let mut refined = Vec::new();
    let all: Vec<usize> = (0..data.len()).collect();
    for ids in all.chunks(EVAL_BATCH) {
        let seeds: Vec<u64> = ids.iter().map(|&i| mix_seed(seed, &[i as u64])).collect();
        let (a, b) = detect_batch(model, store, &data.batch(ids), ids, channel, &seeds, embeddings)?;
        initial.extend(a);
        refined.extend(b.unwrap_or_default());
    }
    let gts = data.ground_truth();
    let k = model.classes();
    let refined_report = embeddings.map(|_| mean_average_precision(&refined, &gts, k, iou_threshold));
    Ok(EvalResult {
        initial: mean_average_precision(&initial, &gts, k, iou_threshold),
        initial_detections: initial,
        refined: refined_report,
        refined_detections: refined,
    })
}
