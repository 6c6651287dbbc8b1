//! On-disk run directory: datasets, knowledge graph, embeddings, checkpoints and
//! logs, each produced on first use and reloaded afterwards.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::{Mode, RunConfig, Schedule};
use super::model::Model;
use super::sweep::{detector_path, load_trained, model_path, TrainedModel, OUTPUT_NOTE};
use super::train::{pretrain_detector, train_for_rate, train_joint, LogEntry, LOG_HEADER};
use super::world::{generate_dataset, Dataset};
use crate::codec::Ratio;
use crate::error::Result;
use crate::kg::{metapath_walks, train_embeddings, EmbeddingTable, KnowledgeGraph};
use crate::numeric::{Checkpoint, ParameterStore};

/// Dataset stream ids passed to [`generate_dataset`].
pub const TRAIN_STREAM: u64 = 0;
pub const EVAL_STREAM: u64 = 1;

pub struct Workspace {
    pub cfg: RunConfig,
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(cfg: RunConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let dir = dir.into();
        fs::create_dir_all(dir.join("models"))?;
        fs::create_dir_all(dir.join("logs"))?;
        Ok(Workspace { cfg, dir })
    }

    pub fn train_path(&self) -> PathBuf {
        self.dir.join("data").join("train.scds")
    }

    pub fn eval_path(&self) -> PathBuf {
        self.dir.join("data").join("eval.scds")
    }

    pub fn kg_path(&self) -> PathBuf {
        self.dir.join("kg").join("kg.tsv")
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.dir.join("kg").join("embeddings.sckp")
    }

    fn dataset(&self, path: &Path, n: usize, stream: u64) -> Result<Dataset> {
        if path.exists() {
            return Dataset::load(path);
        }
        let d = generate_dataset(&self.cfg.data.world, n, stream)?;
        fs::create_dir_all(path.parent().expect("data path has a parent"))?;
        d.save(path)?;
        let mut ann = BufWriter::new(File::create(path.with_extension("csv"))?);
        d.write_annotations(&mut ann, &self.cfg.data.world)?;
        ann.flush()?;
        Ok(d)
    }

    pub fn train_data(&self) -> Result<Dataset> {
        self.dataset(&self.train_path(), self.cfg.data.train_scenes, TRAIN_STREAM)
    }

    pub fn eval_data(&self) -> Result<Dataset> {
        self.dataset(&self.eval_path(), self.cfg.data.eval_scenes, EVAL_STREAM)
    }

    pub fn knowledge_graph(&self) -> Result<KnowledgeGraph> {
        let path = self.kg_path();
        if path.exists() {
            return KnowledgeGraph::load(&path);
        }
        let kg = self.cfg.data.world.knowledge_graph()?;
        fs::create_dir_all(path.parent().expect("kg path has a parent"))?;
        kg.save(&path)?;
        Ok(kg)
    }

    pub fn embeddings(&self) -> Result<EmbeddingTable> {
        let path = self.embeddings_path();
        if path.exists() {
            return EmbeddingTable::load(&path);
        }
        let kg = self.knowledge_graph()?;
        let walks = metapath_walks(&kg, &self.cfg.kg.walks)?;
        let emb = train_embeddings(&kg, &walks, &self.cfg.kg.embedding)?;
        emb.save(&path)?;
        Ok(emb)
    }

    fn log_writer(&self, name: &str) -> Result<BufWriter<File>> {
        let mut w = BufWriter::new(File::create(self.dir.join("logs").join(name))?);
        writeln!(w, "{OUTPUT_NOTE}")?;
        writeln!(w, "{LOG_HEADER}")?;
        Ok(w)
    }

    fn logged<T>(&self, name: &str, f: impl FnOnce(&mut dyn FnMut(LogEntry)) -> Result<T>) -> Result<T> {
        let mut w = self.log_writer(name)?;
        let mut err = None;
        let out = f(&mut |e: LogEntry| {
            if e.step.is_multiple_of(50) {
                log::info!("{} step {}: loss {:.4}", e.stage, e.step, e.loss.total());
            }
            if let Err(x) = writeln!(w, "{e}") {
                err.get_or_insert(x);
            }
        })?;
        if let Some(e) = err {
            return Err(e.into());
        }
        w.flush()?;
        Ok(out)
    }

    fn model(&self, rate: Ratio) -> Result<Model> {
        Model::new(&self.cfg.model, rate, &self.cfg.data.world.class_names())
    }

    /// Codec-free detector for `seed`, shared by every rate.
    pub fn detector(&self, seed: u64, data: &Dataset) -> Result<ParameterStore> {
        let path = detector_path(&self.dir, seed);
        if path.exists() {
            return Checkpoint::load(&path)?.to_store("adam.");
        }
        let mut train = self.cfg.train.clone();
        train.seed = seed;
        let model = self.model(train.rate)?;
        let store =
            self.logged(&format!("seed{seed}_detector.csv"), |log| pretrain_detector(&model, data, &train, log))?;
        Checkpoint::from_store(&store, format!("detector seed={seed}")).save(&path)?;
        Ok(store)
    }

    /// Train (or reload) the pipeline for `(rate, seed)` in the configured mode and
    /// schedule.
    pub fn trained(&self, rate: Ratio, seed: u64) -> Result<TrainedModel> {
        let mode = self.cfg.train.mode;
        if model_path(&self.dir, rate, seed).exists() {
            return load_trained(&self.cfg, &self.dir, rate, seed, mode);
        }
        let data = self.train_data()?;
        let emb = match mode {
            Mode::MsedKg => Some(self.embeddings()?),
            Mode::Msed => None,
        };
        let mut train = self.cfg.train.clone();
        train.seed = seed;
        train.rate = rate;
        let model = self.model(rate)?;
        let log_name = format!("seed{seed}_r{}-{}.csv", rate.num, rate.den);
        let store = match self.cfg.train.schedule {
            Schedule::Staged => {
                let det = self.detector(seed, &data)?;
                self.logged(&log_name, |log| train_for_rate(&model, &data, &train, &det, emb.as_ref(), log))?
            }
            Schedule::Joint => self.logged(&log_name, |log| train_joint(&model, &data, &train, emb.as_ref(), log))?,
        };
        Checkpoint::from_store(&store, format!("pipeline seed={seed} rate={rate} mode={}", mode_name(mode)))
            .save(model_path(&self.dir, rate, seed))?;
        Ok(TrainedModel { seed, model, store })
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Msed => "msed",
        Mode::MsedKg => "msed+kg",
    }
}
