//! Optimization loop. Every step draws its batch, SNR, anchor samples and channel
//! realizations from seeds derived from `(seed, stage, step)`, so a run resumed from a
//! checkpoint continues exactly as the uninterrupted run would.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, TrainConfig};
use super::model::{ImageTargets, Link, Model, FINAL_HEAD, INITIAL_HEAD};
use super::world::Dataset;
use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::kg::EmbeddingTable;
use crate::numeric::{AdamConfig, AdamState, Checkpoint, Graph, ParameterStore};
use crate::seeds::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Extractor, proposal head and initial classifier, without the codec.
    Detector,
    /// Codec, proposal head and initial classifier through the channel; extractor frozen.
    Codec,
    /// Graph attention and final classifier on the frozen pipeline.
    Fusion,
    /// Everything at once through the channel.
    Joint,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Detector => "detector",
            Stage::Codec => "codec",
            Stage::Fusion => "fusion",
            Stage::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Stage::Detector, Stage::Codec, Stage::Fusion, Stage::Joint]
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown training stage `{s}`")))
    }

    fn tag(self) -> u64 {
        match self {
            Stage::Detector => 1,
            Stage::Codec => 2,
            Stage::Fusion => 3,
            Stage::Joint => 4,
        }
    }

    fn frozen(self) -> &'static [&'static str] {
        match self {
            Stage::Detector | Stage::Joint => &[],
            Stage::Codec => &["ext."],
            Stage::Fusion => &["ext.", "enc", "dec", "rpn.", "init."],
        }
    }

    fn trainable(self, name: &str) -> bool {
        !self.frozen().iter().any(|p| name.starts_with(p))
    }

    fn uses_channel(self) -> bool {
        self != Stage::Detector
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Loss components of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLoss {
    pub snr_db: f64,
    pub rpn: f64,
    pub initial: f64,
    pub refined: f64,
}

impl StepLoss {
    pub fn total(&self) -> f64 {
        self.rpn + self.initial + self.refined
    }
}

/// Fixed inputs of a training run.
pub struct TrainData<'a> {
    pub model: &'a Model,
    pub data: &'a Dataset,
    pub targets: Vec<ImageTargets>,
    pub train: &'a TrainConfig,
    /// Required for the fusion stage and for joint training with the graph head.
    pub embeddings: Option<&'a EmbeddingTable>,
}

impl<'a> TrainData<'a> {
    pub fn new(
        model: &'a Model,
        data: &'a Dataset,
        train: &'a TrainConfig,
        embeddings: Option<&'a EmbeddingTable>,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if data.image_size != model.image_size() {
            return Err(Error::Config(format!(
                "dataset images are {} pixels but the model expects {}",
                data.image_size,
                model.image_size()
            )));
        }
        Ok(TrainData {
            model,
            data,
            targets: data.scenes.iter().map(ImageTargets::from_scene).collect(),
            train,
            embeddings,
        })
    }

    fn batch_indices(&self, stage: Stage, step: usize) -> Vec<usize> {
        let n = self.data.len();
        let b = self.train.batch_size;
        let mut perm_epoch = usize::MAX;
        let mut perm: Vec<usize> = Vec::new();
        (step * b..(step + 1) * b)
            .map(|pos| {
                let epoch = pos / n;
                if epoch != perm_epoch {
                    perm = (0..n).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.train.seed, &[stage.tag(), 0, epoch as u64]));
                    perm.shuffle(&mut rng);
                    perm_epoch = epoch;
                }
                perm[pos % n]
            })
            .collect()
    }
}

/// Parameters, optimizer state and position within one stage.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub store: ParameterStore,
    pub adam: AdamState,
    pub stage: Stage,
    pub step: usize,
    /// Whether the graph head participates (joint training only).
    pub refine: bool,
}

impl Trainer {
    pub fn new(store: ParameterStore, stage: Stage, lr: f64, refine: bool) -> Self {
        Trainer {
            store,
            adam: AdamState::new(AdamConfig { learning_rate: lr, ..AdamConfig::default() }),
            stage,
            step: 0,
            refine,
        }
    }

    /// One optimization step.
    pub fn step(&mut self, ctx: &TrainData) -> Result<StepLoss> {
        let model = ctx.model;
        let train = ctx.train;
        let stage = self.stage;
        let refine = stage == Stage::Fusion || (stage == Stage::Joint && self.refine);
        let embeddings = if refine {
            Some(ctx.embeddings.ok_or_else(|| Error::Missing("knowledge-graph embeddings for the graph head".into()))?)
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(train.seed, &[stage.tag(), 1, self.step as u64]));
        let indices = ctx.batch_indices(stage, self.step);
        let images = ctx.data.batch(&indices);
        let targets: Vec<ImageTargets> = indices.iter().map(|&i| ctx.targets[i].clone()).collect();
        let (lo, hi) = train.snr_range_db;
        let snr_db = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let channel = ChannelConfig::from_snr_db(train.channel, model.codec.config.power, snr_db, 0)?;
        let seeds: Vec<u64> =
            (0..indices.len()).map(|j| mix_seed(train.seed, &[stage.tag(), 2, self.step as u64, j as u64])).collect();
        let link = stage.uses_channel().then_some(Link { channel: &channel, seeds: &seeds });

        let g = Graph::with_frozen(stage.frozen());
        let store = &self.store;
        let pyramid = model.pyramid(&g, store, &images, link)?;
        let levels = model.rpn_forward(&g, store, &pyramid)?;
        let mut terms = Vec::new();
        let mut loss = StepLoss { snr_db, ..StepLoss::default() };
        if stage != Stage::Fusion {
            let r = model.rpn_loss(&g, &levels, &targets, train, &mut rng)?;
            loss.rpn = g.value(r).item();
            terms.push(r);
        }
        let proposals = model.proposals(&g, &levels, indices.len(), true);
        let (rois, labels) = model.training_regions(&proposals, &targets);
        let n = rois.len() as f64;
        let out = model.regions(&g, store, &pyramid, rois, embeddings)?;
        if stage != Stage::Fusion {
            let ce = g.scale(g.softmax_cross_entropy(out.initial_logits, &labels)?, 1.0 / n);
            loss.initial = g.value(ce).item();
            terms.push(ce);
        }
        if let Some(fl) = out.final_logits {
            let ce = g.scale(g.softmax_cross_entropy(fl, &labels)?, 1.0 / n);
            loss.refined = g.value(ce).item();
            terms.push(ce);
        }
        if !loss.total().is_finite() {
            return Err(Error::Diverged(format!(
                "{stage} step {}: loss {} (proposal {}, initial {}, refined {}) at {snr_db:.2} dB",
                self.step,
                loss.total(),
                loss.rpn,
                loss.initial,
                loss.refined
            )));
        }
        let total = g.add_n(&terms)?;
        let grads = g.backward(total)?;
        self.store.zero_grad();
        self.store.accumulate(&g, &grads)?;
        if train.clip_norm > 0.0 {
            let norm = self.store.grad_norm(|k| stage.trainable(k));
            if !norm.is_finite() {
                return Err(Error::Diverged(format!("{stage} step {}: non-finite gradient norm", self.step)));
            }
            if norm > train.clip_norm {
                self.store.scale_grads(train.clip_norm / norm);
            }
        }
        self.adam.step_where(&mut self.store, |k| stage.trainable(k))?;
        self.step += 1;
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(
            &self.store,
            format!("stage={} step={} refine={}", self.stage, self.step, self.refine),
        );
        ck.entries.extend(self.adam.to_entries());
        ck
    }

    /// Restore a trainer written by [`Trainer::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint, lr: f64) -> Result<Self> {
        let mut stage = None;
        let mut step = None;
        let mut refine = false;
        for field in ck.meta.split_whitespace() {
            match field.split_once('=') {
                Some(("stage", v)) => stage = Some(Stage::parse(v)?),
                Some(("step", v)) => step = v.parse().ok(),
                Some(("refine", v)) => refine = v == "true",
                _ => {}
            }
        }
        let (Some(stage), Some(step)) = (stage, step) else {
            return Err(Error::Format(format!("checkpoint is not a training state: `{}`", ck.meta)));
        };
        let adam: Vec<_> = ck.entries.iter().filter(|(k, _)| k.starts_with("adam.")).cloned().collect();
        Ok(Trainer {
            store: ck.to_store("adam.")?,
            adam: AdamState::from_entries(AdamConfig { learning_rate: lr, ..AdamConfig::default() }, &adam),
            stage,
            step,
            refine,
        })
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub stage: Stage,
    pub step: usize,
    pub loss: StepLoss,
}

pub const LOG_HEADER: &str = "stage,step,snr_db,loss,proposal,initial,refined";

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "{},{},{:.4},{:.6},{:.6},{:.6},{:.6}",
            self.stage,
            self.step,
            l.snr_db,
            l.total(),
            l.rpn,
            l.initial,
            l.refined
        )
    }
}

/// Run `trainer` until it has taken `steps` steps in its stage, optionally writing a
/// checkpoint to `checkpoint` every `checkpoint_every` steps.
pub fn run_stage(
    trainer: &mut Trainer,
    ctx: &TrainData,
    steps: usize,
    checkpoint: Option<&Path>,
    log: &mut dyn FnMut(LogEntry),
) -> Result<()> {
    let every = ctx.train.checkpoint_every;
    while trainer.step < steps {
        let loss = trainer.step(ctx)?;
        log(LogEntry { stage: trainer.stage, step: trainer.step - 1, loss });
        if let Some(path) = checkpoint {
            if every > 0 && trainer.step.is_multiple_of(every) {
                trainer.to_checkpoint().save(path)?;
            }
        }
    }
    Ok(())
}

/// Extractor, proposal head and initial classifier trained without the codec.
pub fn pretrain_detector(
    model: &Model,
    data: &Dataset,
    train: &TrainConfig,
    log: &mut dyn FnMut(LogEntry),
) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(train.seed, &[0, 0]));
    model.init_detector(&mut store, &mut rng)?;
    let ctx = TrainData::new(model, data, train, None)?;
    let mut t = Trainer::new(store, Stage::Detector, train.lr, false);
    run_stage(&mut t, &ctx, train.detector_steps, None, log)?;
    Ok(t.store)
}

/// Codec training on top of a pretrained detector, then (for MSED+KG) the graph head.
/// The returned store serves both modes: MSED reads the initial classifier and
/// MSED+KG the final one.
pub fn train_for_rate(
    model: &Model,
    data: &Dataset,
    train: &TrainConfig,
    detector: &ParameterStore,
    embeddings: Option<&EmbeddingTable>,
    log: &mut dyn FnMut(LogEntry),
) -> Result<ParameterStore> {
    let mut store = detector.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(train.seed, &[0, 1]));
    model.init_codec(&mut store, &mut rng)?;
    let ctx = TrainData::new(model, data, train, embeddings)?;
    let mut t = Trainer::new(store, Stage::Codec, train.lr, false);
    run_stage(&mut t, &ctx, train.codec_steps, None, log)?;
    let mut store = t.store;
    if train.mode == Mode::MsedKg {
        model.init_fusion(&mut store, &mut rng)?;
        let mut t = Trainer::new(store, Stage::Fusion, train.fusion_lr, true);
        run_stage(&mut t, &ctx, train.fusion_steps, None, log)?;
        store = t.store;
    }
    Ok(store)
}

/// Joint schedule: all modules initialized and trained together through the channel.
pub fn train_joint(
    model: &Model,
    data: &Dataset,
    train: &TrainConfig,
    embeddings: Option<&EmbeddingTable>,
    log: &mut dyn FnMut(LogEntry),
) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(train.seed, &[0, 0]));
    model.init_detector(&mut store, &mut rng)?;
    model.init_codec(&mut store, &mut rng)?;
    let refine = train.mode == Mode::MsedKg;
    if refine {
        model.init_fusion(&mut store, &mut rng)?;
    }
    let ctx = TrainData::new(model, data, train, embeddings)?;
    let mut t = Trainer::new(store, Stage::Joint, train.lr, refine);
    run_stage(&mut t, &ctx, train.detector_steps, None, log)?;
    Ok(t.store)
}

/// Whether `store` holds the graph head.
pub fn has_fusion(store: &ParameterStore) -> bool {
    store.contains(&format!("{FINAL_HEAD}.fc1.w")) && store.contains("rgat.proj.w")
}

/// Whether `store` holds a complete MSED pipeline.
pub fn has_pipeline(store: &ParameterStore) -> bool {
    store.contains(&format!("{INITIAL_HEAD}.fc1.w")) && store.contains("enc2.down.w") && store.contains("ext.stem.w")
}
