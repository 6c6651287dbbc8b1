//! Toy semantic extractor: a five-stage convolutional backbone plus a feature pyramid
//! network producing five levels at strides 4, 8, 16, 32 and 64.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::complexity::{CountOps, LayerOp};
use crate::error::{Error, Result};
use crate::numeric::{Conv, Graph, ParameterStore, ResidualBlock, Tensor, Var, LEAKY_SLOPE};

/// Number of pyramid levels (P2..P6).
pub const LEVELS: usize = 5;
/// Stride of the finest level relative to the image.
pub const FINEST_STRIDE: usize = 4;
/// Stride of the coarsest level relative to the image.
pub const COARSEST_STRIDE: usize = 64;

/// Five feature maps `[B, C_f, s_i, s_i]` with `s_{i+1} = s_i / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        check_levels(&levels.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>(), 2)?;
        Ok(FeaturePyramid { levels })
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn channels(&self) -> usize {
        self.levels[0].shape()[1]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|t| t.shape()[2]).collect()
    }
}

/// Graph-resident pyramid (one var per level).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pyramid {
    pub levels: Vec<Var>,
}

impl Pyramid {
    pub fn values(&self, g: &Graph) -> Vec<Tensor> {
        self.levels.iter().map(|&v| g.value(v)).collect()
    }

    pub fn to_feature_pyramid(&self, g: &Graph) -> Result<FeaturePyramid> {
        FeaturePyramid::new(self.values(g))
    }

    pub fn shapes(&self, g: &Graph) -> Vec<Vec<usize>> {
        self.levels.iter().map(|&v| g.shape(v)).collect()
    }
}

/// Validate five NCHW levels that halve exactly and share batch and channel counts.
pub(crate) fn check_levels(shapes: &[Vec<usize>], min_size: usize) -> Result<()> {
    if shapes.len() != LEVELS {
        return Err(Error::invalid(format!("pyramid needs {LEVELS} levels, got {}", shapes.len())));
    }
    let first = &shapes[0];
    if first.len() != 4 {
        return Err(Error::shape("pyramid level", first, &[0, 0, 0, 0]));
    }
    for (i, s) in shapes.iter().enumerate() {
        if s.len() != 4 || s[0] != first[0] || s[1] != first[1] || s[2] != s[3] {
            return Err(Error::shape("pyramid level", s, first));
        }
        if i > 0 && s[2] * 2 != shapes[i - 1][2] {
            return Err(Error::invalid(format!(
                "pyramid level {i} has size {} but previous is {}",
                s[2],
                shapes[i - 1][2]
            )));
        }
    }
    let smallest = shapes[LEVELS - 1][2];
    if smallest < min_size {
        return Err(Error::invalid(format!("smallest pyramid level is {smallest}, need at least {min_size}")));
    }
    Ok(())
}

/// Spatial sizes `s_2..s_6` for a square image.
pub fn level_sizes(image_size: usize) -> Result<Vec<usize>> {
    if image_size < 2 * COARSEST_STRIDE || !image_size.is_multiple_of(COARSEST_STRIDE) {
        return Err(Error::invalid(format!(
            "image size {image_size} too small for five strides: need a multiple of \
             {COARSEST_STRIDE} that is at least {}",
            2 * COARSEST_STRIDE
        )));
    }
    Ok((0..LEVELS).map(|i| image_size / (FINEST_STRIDE << i)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub image_size: usize,
    pub stem_channels: usize,
    /// Output channels of the four strided residual stages (C2..C5).
    pub stage_channels: [usize; 4],
    /// Uniform pyramid width `C_f`.
    pub fpn_channels: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig { image_size: 128, stem_channels: 8, stage_channels: [16, 24, 32, 32], fpn_channels: 32 }
    }
}

/// Backbone + FPN. Parameters live under the `ext.` prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct Extractor {
    pub config: ExtractorConfig,
}

impl Extractor {
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        level_sizes(config.image_size)?;
        if config.fpn_channels == 0 || config.stem_channels == 0 || config.stage_channels.contains(&0) {
            return Err(Error::invalid("extractor channel counts must be positive"));
        }
        Ok(Extractor { config })
    }

    fn stem(&self) -> Conv {
        Conv::new(3, self.config.stem_channels, 3, 2, 1)
    }

    fn stages(&self) -> Vec<ResidualBlock> {
        let mut prev = self.config.stem_channels;
        self.config
            .stage_channels
            .iter()
            .map(|&c| {
                let b = ResidualBlock::new(prev, c, 2);
                prev = c;
                b
            })
            .collect()
    }

    /// 1x1 projections of C2..C5; the stride-64 level comes from [`Extractor::extra`].
    fn laterals(&self) -> Vec<Conv> {
        self.config.stage_channels.iter().map(|&c| Conv::new(c, self.config.fpn_channels, 1, 1, 0)).collect()
    }

    /// Stride-2 convolution on the deepest stage, giving the stride-64 level.
    fn extra(&self) -> Conv {
        Conv::new(self.config.stage_channels[3], self.config.fpn_channels, 3, 2, 1)
    }

    fn smooth(&self) -> Conv {
        let c = self.config.fpn_channels;
        Conv::new(c, c, 3, 1, 1)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.stem().init(store, "ext.stem", rng)?;
        for (i, s) in self.stages().iter().enumerate() {
            s.init(store, &format!("ext.stage{}", i + 2), rng)?;
        }
        for (i, l) in self.laterals().iter().enumerate() {
            l.init(store, &format!("ext.lat{}", i + 2), rng)?;
        }
        self.extra().init(store, "ext.lat6", rng)?;
        for i in 0..LEVELS {
            self.smooth().init(store, &format!("ext.smooth{}", i + 2), rng)?;
        }
        Ok(())
    }

    /// Bottom-up backbone, lateral projections, top-down merge and smoothing.
    pub fn forward(&self, g: &Graph, store: &ParameterStore, image: Var) -> Result<Pyramid> {
        let shape = g.shape(image);
        let size = self.config.image_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != size || shape[3] != size {
            return Err(Error::shape("extract (image)", &shape, &[0, 3, size, size]));
        }
        let x = self.stem().forward(g, store, "ext.stem", image)?;
        let mut x = g.leaky_relu(x, LEAKY_SLOPE);
        let mut stages = Vec::with_capacity(4);
        for (i, s) in self.stages().iter().enumerate() {
            x = s.forward(g, store, &format!("ext.stage{}", i + 2), x)?;
            stages.push(x);
        }
        let mut lateral = Vec::with_capacity(LEVELS);
        for (i, (l, &c)) in self.laterals().iter().zip(&stages).enumerate() {
            lateral.push(l.forward(g, store, &format!("ext.lat{}", i + 2), c)?);
        }
        lateral.push(self.extra().forward(g, store, "ext.lat6", stages[3])?);

        let mut merged = [lateral[LEVELS - 1]; LEVELS];
        for i in (0..LEVELS - 1).rev() {
            let up = g.upsample2x(merged[i + 1])?;
            merged[i] = g.add(lateral[i], up)?;
        }
        let levels = merged
            .iter()
            .enumerate()
            .map(|(i, &m)| self.smooth().forward(g, store, &format!("ext.smooth{}", i + 2), m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Pyramid { levels })
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        level_sizes(self.config.image_size).expect("validated in new")
    }
}

impl CountOps for Extractor {
    fn layer_ops(&self) -> Vec<LayerOp> {
        let mut ops = Vec::new();
        let mut size = self.config.image_size;
        ops.push(self.stem().op(size, size));
        size = self.stem().out_size(size);
        let mut stage_sizes = Vec::new();
        for s in self.stages() {
            ops.extend(s.ops(size, size));
            size = s.out_size(size);
            stage_sizes.push(size);
        }
        for (l, &s) in self.laterals().iter().zip(&stage_sizes) {
            ops.push(l.op(s, s));
        }
        ops.push(self.extra().op(stage_sizes[3], stage_sizes[3]));
        let sizes = self.level_sizes();
        for &s in &sizes[..LEVELS - 1] {
            ops.push(LayerOp::Add { elements: self.config.fpn_channels * s * s });
        }
        for &s in &sizes {
            ops.push(self.smooth().op(s, s));
        }
        ops
    }
}
