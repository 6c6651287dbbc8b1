//! The assembled detector: extractor, codec and channel, region proposals, pooled
//! region features, the initial classifier and the graph-refined final classifier.

use rand::Rng;

use super::config::{Mode, ModelConfig, TrainConfig};
use super::world::Scene;
use crate::channel::ChannelConfig;
use crate::codec::complexity::{count_complexity, Complexity, CountOps, LayerOp};
use crate::codec::{channels_for_ratio, Codec, Ratio};
use crate::detector::rpn::{anchor_offsets, regression_target, sample_anchors, RpnGeometry, RpnLevel};
use crate::detector::{assign_anchors, iou, nms, propose, pyramid_anchors, AnchorLabel, BBox, Detection, RpnHead};
use crate::error::{Error, Result};
use crate::fusion::{build_weighted_graph, final_input, ClassifierHead, EdgeType, Rgat, WeightedGraph};
use crate::kg::EmbeddingTable;
use crate::numeric::{Graph, ParameterStore, Tensor, Var};
use crate::pyramid::{Extractor, Pyramid};

pub const INITIAL_HEAD: &str = "init";
pub const FINAL_HEAD: &str = "final";

/// Anchor IoU thresholds for objectness labels.
const ANCHOR_HI: f64 = 0.7;
const ANCHOR_LO: f64 = 0.3;

/// Ground truth of one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageTargets {
    pub boxes: Vec<BBox>,
    pub classes: Vec<usize>,
}

impl ImageTargets {
    pub fn from_scene(scene: &Scene) -> Self {
        ImageTargets {
            boxes: scene.objects.iter().map(|o| o.bbox).collect(),
            classes: scene.objects.iter().map(|o| o.class).collect(),
        }
    }
}

/// Channel in the loop: configuration and one seed per batch image.
#[derive(Clone, Copy, Debug)]
pub struct Link<'a> {
    pub channel: &'a ChannelConfig,
    pub seeds: &'a [u64],
}

/// Classifier outputs over a set of regions.
#[derive(Clone, Debug)]
pub struct RegionOutputs {
    /// `(batch row, box)` of every region, grouped by image.
    pub rois: Vec<(usize, BBox)>,
    pub pooled: Var,
    pub initial_logits: Var,
    /// Present when the graph head ran.
    pub final_logits: Option<Var>,
    pub graph: Option<WeightedGraph>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub class_names: Vec<String>,
    pub extractor: Extractor,
    pub codec: Codec,
    pub rpn: RpnHead,
    pub anchors: Vec<Vec<BBox>>,
    pub initial: ClassifierHead,
    pub final_head: ClassifierHead,
    pub rgat: Rgat,
}

impl Model {
    pub fn new(config: &ModelConfig, rate: Ratio, class_names: &[String]) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Config("model needs at least one class".into()));
        }
        let extractor = Extractor::new(config.extractor.clone())?;
        let sizes = extractor.level_sizes();
        let rate_cfg = channels_for_ratio(rate, config.extractor.image_size, &sizes)?;
        let c = config.extractor.fpn_channels;
        let codec = Codec::new(config.codec.clone(), rate_cfg, c, sizes.clone())?;
        let pooled = c * config.roi_size * config.roi_size;
        let k = class_names.len();
        Ok(Model {
            config: config.clone(),
            class_names: class_names.to_vec(),
            extractor,
            codec,
            rpn: RpnHead::new(c),
            anchors: pyramid_anchors(&sizes, config.anchor_scale),
            initial: ClassifierHead::new(INITIAL_HEAD, pooled, config.head_hidden, k + 1),
            final_head: ClassifierHead::new(FINAL_HEAD, config.rgat_dim + pooled, config.head_hidden, k + 1),
            rgat: Rgat::new(pooled, config.rgat_dim),
        })
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn pooled_dim(&self) -> usize {
        self.initial.inputs
    }

    pub fn image_size(&self) -> usize {
        self.config.extractor.image_size
    }

    /// Extractor, proposal head and initial classifier.
    pub fn init_detector<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.extractor.init(store, rng)?;
        self.rpn.init(store, rng)?;
        self.initial.init(store, rng)
    }

    pub fn init_codec<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.codec.init(store, rng)
    }

    /// Graph attention and the final classifier. The final classifier starts as a copy
    /// of the initial one on the original-feature inputs, with zero weight on the graph
    /// features, so refinement begins from the initial decision.
    pub fn init_fusion<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.rgat.init(store, rng)?;
        self.final_head.init(store, rng)?;
        let d = self.config.rgat_dim;
        let w = store.get(&format!("{INITIAL_HEAD}.fc1.w"))?;
        let hidden = self.config.head_hidden;
        let mut fw = vec![0.0; (d + w.shape()[0]) * hidden];
        fw[d * hidden..].copy_from_slice(w.data());
        store.set(&format!("{FINAL_HEAD}.fc1.w"), Tensor::from_parts(vec![d + w.shape()[0], hidden], fw))?;
        for name in ["fc1.b", "fc2.w", "fc2.b"] {
            let v = store.get(&format!("{INITIAL_HEAD}.{name}"))?.clone();
            store.set(&format!("{FINAL_HEAD}.{name}"), v)?;
        }
        Ok(())
    }

    /// Feature pyramid as seen by the receiver. Without a link the codec is bypassed.
    pub fn pyramid(&self, g: &Graph, store: &ParameterStore, images: &Tensor, link: Option<Link>) -> Result<Pyramid> {
        let x = g.constant(images.clone());
        let p = self.extractor.forward(g, store, x)?;
        match link {
            None => Ok(p),
            Some(l) => {
                let z = self.codec.encode(g, store, &p)?;
                let rx = self.codec.transmit(g, &z, l.channel, l.seeds)?;
                self.codec.decode(g, store, &rx.pyramid)
            }
        }
    }

    pub fn rpn_forward(&self, g: &Graph, store: &ParameterStore, pyramid: &Pyramid) -> Result<Vec<RpnLevel>> {
        self.rpn.forward(g, store, pyramid)
    }

    /// Proposal-head loss over sampled anchors of every image.
    pub fn rpn_loss<R: Rng + ?Sized>(
        &self,
        g: &Graph,
        levels: &[RpnLevel],
        targets: &[ImageTargets],
        train: &TrainConfig,
        rng: &mut R,
    ) -> Result<Var> {
        let flat: Vec<BBox> = self.anchors.iter().flatten().copied().collect();
        let mut starts = Vec::with_capacity(self.anchors.len());
        let mut acc = 0;
        for a in &self.anchors {
            starts.push(acc);
            acc += a.len();
        }
        let shapes: Vec<Vec<usize>> = levels.iter().map(|l| g.shape(l.objectness)).collect();
        // Per level: objectness offsets, delta offsets, labels and targets.
        let mut obj_idx = vec![Vec::new(); levels.len()];
        let mut del_idx = vec![Vec::new(); levels.len()];
        let mut p_star = vec![Vec::new(); levels.len()];
        let mut t_star = vec![Vec::new(); levels.len()];
        for (b, tg) in targets.iter().enumerate() {
            let labels = assign_anchors(&flat, &tg.boxes, ANCHOR_HI, ANCHOR_LO);
            for i in sample_anchors(&labels, train.rpn_batch, train.positive_fraction, rng) {
                let l = starts.partition_point(|&s| s <= i) - 1;
                let a = i - starts[l];
                let (o, d) = anchor_offsets(&shapes[l], b, a);
                obj_idx[l].push(o);
                del_idx[l].extend_from_slice(&d);
                match labels[i] {
                    AnchorLabel::Positive(j) => {
                        p_star[l].push(1.0);
                        t_star[l].extend_from_slice(&regression_target(&flat[i], &tg.boxes[j]));
                    }
                    _ => {
                        p_star[l].push(0.0);
                        t_star[l].extend_from_slice(&[0.0; 4]);
                    }
                }
            }
        }
        let mut logits = Vec::new();
        let mut deltas = Vec::new();
        for (l, lv) in levels.iter().enumerate() {
            if obj_idx[l].is_empty() {
                continue;
            }
            logits.push(g.gather_flat(lv.objectness, &obj_idx[l])?);
            let d = g.gather_flat(lv.deltas, &del_idx[l])?;
            deltas.push(g.reshape(d, &[obj_idx[l].len(), 4])?);
        }
        if logits.is_empty() {
            return Ok(g.constant(Tensor::scalar(0.0)));
        }
        let p_star: Vec<f64> = p_star.concat();
        let n = p_star.len();
        let positives = p_star.iter().filter(|&&p| p == 1.0).count();
        let p = g.sigmoid(g.concat0(&logits)?);
        let t = g.concat0(&deltas)?;
        let t_star = Tensor::from_parts(vec![n, 4], t_star.concat());
        g.loss_total(p, &p_star, t, &t_star, train.lambda, n, positives)
    }

    /// Proposals per image from the head's current outputs.
    pub fn proposals(&self, g: &Graph, levels: &[RpnLevel], batch: usize, training: bool) -> Vec<Vec<(BBox, f64)>> {
        let obj: Vec<Tensor> = levels.iter().map(|l| g.value(l.objectness)).collect();
        let del: Vec<Tensor> = levels.iter().map(|l| g.value(l.deltas)).collect();
        let cfg = if training { &self.config.train_proposals } else { &self.config.eval_proposals };
        (0..batch).map(|b| propose(&obj, &del, &self.anchors, b, self.image_size() as f64, cfg)).collect()
    }

    /// Training regions: proposals plus the ground-truth boxes, labelled with the class
    /// of the best-overlapping box when IoU reaches the foreground threshold and with
    /// background otherwise.
    pub fn training_regions(
        &self,
        proposals: &[Vec<(BBox, f64)>],
        targets: &[ImageTargets],
    ) -> (Vec<(usize, BBox)>, Vec<usize>) {
        let bg = self.classes();
        let mut rois = Vec::new();
        let mut labels = Vec::new();
        for (b, (props, tg)) in proposals.iter().zip(targets).enumerate() {
            for bx in props.iter().map(|p| p.0).chain(tg.boxes.iter().copied()) {
                let best = tg
                    .boxes
                    .iter()
                    .enumerate()
                    .map(|(j, t)| (j, iou(&bx, t)))
                    .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
                let label = match best {
                    Some((j, v)) if v >= self.config.roi_fg_iou => tg.classes[j],
                    _ => bg,
                };
                rois.push((b, bx));
                labels.push(label);
            }
        }
        (rois, labels)
    }

    /// Pool the regions and run the classifiers. The graph head runs when
    /// `embeddings` is given.
    pub fn regions(
        &self,
        g: &Graph,
        store: &ParameterStore,
        pyramid: &Pyramid,
        rois: Vec<(usize, BBox)>,
        embeddings: Option<&EmbeddingTable>,
    ) -> Result<RegionOutputs> {
        if rois.is_empty() {
            return Err(Error::invalid("no regions to classify"));
        }
        let pooled = g.roi_pool(&pyramid.levels, &rois, self.config.roi_size, self.config.roi_canonical)?;
        let initial_logits = self.initial.logits(g, store, pooled)?;
        let (final_logits, graph) = match embeddings {
            None => (None, None),
            Some(emb) => {
                let conf = g.value(g.softmax_rows(initial_logits)?);
                let (logits, graph) = self.refine(g, store, &rois, pooled, &conf, emb)?;
                (Some(logits), Some(graph))
            }
        };
        Ok(RegionOutputs { rois, pooled, initial_logits, final_logits, graph })
    }

    /// Per-image fusion graphs, graph attention and the final classifier.
    fn refine(
        &self,
        g: &Graph,
        store: &ParameterStore,
        rois: &[(usize, BBox)],
        pooled: Var,
        confidences: &Tensor,
        emb: &EmbeddingTable,
    ) -> Result<(Var, WeightedGraph)> {
        let feats = g.value(pooled);
        let dp = self.pooled_dim();
        let k1 = self.classes() + 1;
        let mut graphs = Vec::new();
        let mut start = 0;
        while start < rois.len() {
            let b = rois[start].0;
            let end = start + rois[start..].iter().take_while(|r| r.0 == b).count();
            let f = Tensor::from_parts(vec![end - start, dp], feats.data()[start * dp..end * dp].to_vec());
            let c = Tensor::from_parts(vec![end - start, k1], confidences.data()[start * k1..end * k1].to_vec());
            graphs.push(build_weighted_graph(&f, &c, &self.class_names, emb, &self.config.graph, &[])?);
            start = end;
        }
        let graph = WeightedGraph::disjoint_union(&graphs);
        let d = self.config.rgat_dim;
        let mut cats = Vec::with_capacity(graph.categories.len() * d);
        for &c in &graph.categories {
            cats.extend_from_slice(emb.get(&self.class_names[c])?);
        }
        let cats = Tensor::from_parts(vec![graph.categories.len(), d], cats);
        let h = self.rgat.node_features(g, store, pooled, &cats)?;
        let h = self.rgat.rgat_forward(g, store, &graph, h)?;
        let rows: Vec<usize> = (0..rois.len()).collect();
        let enhanced = g.gather_rows(h, &rows)?;
        let x = final_input(g, enhanced, pooled)?;
        Ok((self.final_head.logits(g, store, x)?, graph))
    }

    /// Detections from per-region class probabilities `[R, K + 1]`: every foreground
    /// class at or above the score threshold, then per-class suppression per image.
    pub fn detections(&self, rois: &[(usize, BBox)], probs: &Tensor, image_ids: &[usize]) -> Vec<Detection> {
        let k = self.classes();
        let mut out = Vec::new();
        for (b, &image_id) in image_ids.iter().enumerate() {
            for class in 0..k {
                let mut boxes = Vec::new();
                let mut scores = Vec::new();
                for (r, &(rb, bx)) in rois.iter().enumerate() {
                    let s = probs.data()[r * (k + 1) + class];
                    if rb == b && s >= self.config.score_threshold {
                        boxes.push(bx);
                        scores.push(s);
                    }
                }
                for i in nms(&boxes, &scores, self.config.detection_nms, usize::MAX) {
                    out.push(Detection { image_id, class, score: scores[i], bbox: boxes[i] });
                }
            }
        }
        out
    }

    /// Per-image layer list of the deployed system with `proposals` regions per image.
    pub fn layer_ops(&self, mode: Mode, proposals: usize) -> Vec<LayerOp> {
        let mut ops = self.extractor.layer_ops();
        ops.extend(self.codec.layer_ops());
        let sizes = self.extractor.level_sizes();
        ops.extend(RpnGeometry { head: &self.rpn, sizes: &sizes }.layer_ops());
        ops.extend(self.initial.layer_ops(proposals));
        if mode == Mode::MsedKg {
            let k = self.classes();
            let m = self.config.graph.top_m.unwrap_or(k).min(k);
            let kk = if self.config.graph.kk_all_pairs { k * (k - 1) / 2 } else { 0 };
            let edges = [proposals * proposals.saturating_sub(1), 2 * proposals * m, 2 * kk];
            debug_assert_eq!(EdgeType::ALL.len(), edges.len());
            ops.extend(self.rgat.layer_ops(proposals, proposals + k, edges));
            ops.extend(self.final_head.layer_ops(proposals));
        }
        ops
    }

    pub fn complexity(&self, mode: Mode, proposals: usize) -> Complexity {
        count_complexity(&self.layer_ops(mode, proposals))
    }
}
