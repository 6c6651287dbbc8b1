//! Run configuration, read from TOML. Every field has a default so partial files work.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::world::WorldSpec;
use crate::channel::{ChannelKind, ReceiverMode};
use crate::codec::{CodecConfig, Ratio};
use crate::detector::ProposalConfig;
use crate::error::{Error, Result};
use crate::fusion::GraphConfig;
use crate::kg::{EmbeddingConfig, WalkConfig};
use crate::pyramid::ExtractorConfig;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SEMCOM_OUT_DIR";

/// Ablation arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "msed")]
    Msed,
    #[serde(rename = "msed+kg")]
    MsedKg,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Msed, Mode::MsedKg];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Msed => "MSED",
            Mode::MsedKg => "MSED+KG",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msed" => Ok(Mode::Msed),
            "msed+kg" | "msed-kg" | "kg" => Ok(Mode::MsedKg),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected msed or msed+kg)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub world: WorldSpec,
    pub train_scenes: usize,
    pub eval_scenes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { world: WorldSpec::default(), train_scenes: 2000, eval_scenes: 400 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    pub codec: CodecConfig,
    /// Anchor side as a multiple of the level stride.
    pub anchor_scale: f64,
    /// Side of the pooled grid.
    pub roi_size: usize,
    /// Box side pooled from the stride-16 level.
    pub roi_canonical: f64,
    pub head_hidden: usize,
    /// Graph attention width; knowledge-graph embeddings use the same size.
    pub rgat_dim: usize,
    pub graph: GraphConfig,
    pub train_proposals: ProposalConfig,
    pub eval_proposals: ProposalConfig,
    /// Foreground threshold on IoU when labelling proposals for the classifiers.
    pub roi_fg_iou: f64,
    /// Detections below this score are dropped.
    pub score_threshold: f64,
    /// Per-class NMS on final detections.
    pub detection_nms: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            extractor: ExtractorConfig {
                image_size: 128,
                stem_channels: 8,
                stage_channels: [16, 16, 24, 24],
                fpn_channels: 16,
            },
            codec: CodecConfig { res_blocks: 1, ..CodecConfig::default() },
            anchor_scale: 4.0,
            roi_size: 4,
            roi_canonical: 64.0,
            head_hidden: 64,
            rgat_dim: 32,
            graph: GraphConfig::default(),
            train_proposals: ProposalConfig { pre_nms: 200, nms_iou: 0.7, post_nms: 16, min_size: 2.0 },
            eval_proposals: ProposalConfig { pre_nms: 300, nms_iou: 0.5, post_nms: 20, min_size: 2.0 },
            roi_fg_iou: 0.5,
            score_threshold: 0.01,
            detection_nms: 0.5,
        }
    }
}

#[derive(Default, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgConfig {
    pub walks: WalkConfig,
    pub embedding: EmbeddingConfig,
}

/// How training stages are arranged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Detector pretraining without the codec, then codec + heads through the channel
    /// with the extractor frozen, then the graph head on the frozen pipeline.
    #[default]
    Staged,
    /// Every parameter trained together through the channel from the start.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub rate: Ratio,
    pub schedule: Schedule,
    pub lr: f64,
    pub batch_size: usize,
    /// Steps of detector pretraining (staged) or of joint training.
    pub detector_steps: usize,
    /// Steps of codec training through the channel (staged only).
    pub codec_steps: usize,
    /// Steps of graph-head training (MSED+KG only).
    pub fusion_steps: usize,
    pub fusion_lr: f64,
    /// Per-batch training SNR is uniform in this range (dB).
    pub snr_range_db: (f64, f64),
    pub channel: ChannelKind,
    pub rpn_batch: usize,
    pub positive_fraction: f64,
    /// Weight of the box-regression term.
    pub lambda: f64,
    /// Gradients are rescaled to at most this global norm (0 disables).
    pub clip_norm: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::MsedKg,
            rate: Ratio { num: 1, den: 6 },
            schedule: Schedule::Staged,
            lr: 2e-3,
            batch_size: 4,
            detector_steps: 1000,
            codec_steps: 600,
            fusion_steps: 400,
            fusion_lr: 2e-3,
            snr_range_db: (0.0, 20.0),
            channel: ChannelKind::Awgn,
            rpn_batch: 32,
            positive_fraction: 0.5,
            lambda: 1.0,
            clip_norm: 5.0,
            seed: 1,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub channel: ChannelKind,
    pub receiver: ReceiverMode,
    pub snr_db: f64,
    pub iou_threshold: f64,
    /// Base seed for channel realizations at evaluation.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            channel: ChannelKind::Awgn,
            receiver: ReceiverMode::Equalize,
            snr_db: 10.0,
            iou_threshold: 0.5,
            seed: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    /// Rates covered by the SNR sweep.
    pub snr_rates: Vec<Ratio>,
    /// Rates covered by the rate sweep.
    pub rates: Vec<Ratio>,
    pub channels: Vec<ChannelKind>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    /// SNR used by the rate sweep.
    pub rate_snr_db: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            snr_db: vec![0.0, 10.0, 20.0],
            snr_rates: vec![Ratio { num: 1, den: 6 }, Ratio { num: 1, den: 12 }],
            rates: vec![Ratio { num: 1, den: 6 }, Ratio { num: 1, den: 12 }, Ratio { num: 1, den: 24 }],
            channels: vec![ChannelKind::Awgn, ChannelKind::Rayleigh],
            modes: vec![Mode::Msed, Mode::MsedKg],
            seeds: vec![1, 2, 3, 4, 5],
            rate_snr_db: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Output directory; empty means `$SEMCOM_OUT_DIR` or `./runs`.
    pub dir: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub kg: KgConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.world.validate()?;
        if self.data.world.image_size != self.model.extractor.image_size {
            return Err(Error::Config(format!(
                "world image size {} differs from extractor image size {}",
                self.data.world.image_size, self.model.extractor.image_size
            )));
        }
        if self.kg.embedding.dim != self.model.rgat_dim {
            return Err(Error::Config(format!(
                "embedding dimension {} must equal the graph attention width {}",
                self.kg.embedding.dim, self.model.rgat_dim
            )));
        }
        let t = &self.train;
        if t.batch_size == 0 || !(t.lr > 0.0) || !(t.fusion_lr > 0.0) {
            return Err(Error::Config("batch size and learning rates must be positive".into()));
        }
        if !(t.snr_range_db.0 <= t.snr_range_db.1) {
            return Err(Error::Config("SNR range must be ordered".into()));
        }
        if self.model.roi_size == 0 || self.model.head_hidden == 0 || self.model.rgat_dim == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }

    /// Output directory: the configured one, else `$SEMCOM_OUT_DIR`, else `./runs`.
    pub fn out_dir(&self) -> PathBuf {
        if !self.output.dir.as_os_str().is_empty() {
            return self.output.dir.clone();
        }
        std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = RunConfig::from_toml("[train]\nmode = \"msed\"\nrate = \"1/12\"\n").unwrap();
        assert_eq!(cfg.train.mode, Mode::Msed);
        assert_eq!(cfg.train.rate, Ratio { num: 1, den: 12 });
        assert_eq!(cfg.data.train_scenes, 2000);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("[train]\nrate = \"0/3\"\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[train]\nbatch_size = 0\n"), Err(Error::Config(_))));
    }
}
