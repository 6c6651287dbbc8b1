//! Parallel multi-scale semantic codec: one encoder and one decoder per pyramid level,
//! rate accounting and differentiable transmission of the codes.

pub mod complexity;
pub mod rate;
pub mod transmit;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::numeric::{Conv, Deconv, Graph, ParameterStore, ResidualBlock, Tensor, Var};
use crate::pyramid::{check_levels, FeaturePyramid, Pyramid, LEVELS};
pub use crate::seeds::mix_seed;
use complexity::{CountOps, LayerOp};
pub use rate::{channels_for_ratio, RateConfig, Ratio};

/// Five code levels `[B, C, s_i/2, s_i/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPyramid {
    levels: Vec<Tensor>,
}

impl EncodedPyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        check_levels(&levels.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>(), 1)?;
        Ok(EncodedPyramid { levels })
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }
}

/// How encoded scales are mapped onto channel blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransmitMode {
    /// Each scale is normalized and sent as its own block.
    #[default]
    PerScale,
    /// All scales are concatenated into one normalized block.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    /// Residual blocks per scale before the downsampling convolution (and after the
    /// upsampling deconvolution).
    pub res_blocks: usize,
    pub deconv_kernel: usize,
    pub transmit: TransmitMode,
    /// Average transmit power `P`.
    pub power: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig { res_blocks: 2, deconv_kernel: 4, transmit: TransmitMode::PerScale, power: 1.0 }
    }
}

/// Encoder/decoder geometry for a fixed pyramid and rate. Parameters live under
/// `enc{i}.` and `dec{i}.` for levels `i = 2..6`.
#[derive(Clone, Debug, PartialEq)]
pub struct Codec {
    pub config: CodecConfig,
    pub rate: RateConfig,
    pub fpn_channels: usize,
    pub sizes: Vec<usize>,
}

fn level_name(i: usize) -> usize {
    i + 2
}

impl Codec {
    pub fn new(config: CodecConfig, rate: RateConfig, fpn_channels: usize, sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() != LEVELS || sizes.iter().any(|&s| s < 2) {
            return Err(Error::invalid(format!("codec needs {LEVELS} pyramid sizes of at least 2, got {sizes:?}")));
        }
        if sizes.iter().map(|s| s / 2).collect::<Vec<_>>() != rate.encoded_sizes {
            return Err(Error::invalid("rate config was derived for a different pyramid"));
        }
        if config.deconv_kernel < 2 || !config.deconv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "deconv kernel must be even and at least 2, got {}",
                config.deconv_kernel
            )));
        }
        if !(config.power > 0.0 && config.power.is_finite()) {
            return Err(Error::Config(format!("transmit power must be positive, got {}", config.power)));
        }
        Ok(Codec { config, rate, fpn_channels, sizes })
    }

    pub fn code_channels(&self) -> usize {
        self.rate.channels
    }

    fn blocks(&self) -> Vec<ResidualBlock> {
        vec![ResidualBlock::new(self.fpn_channels, self.fpn_channels, 1); self.config.res_blocks]
    }

    fn down(&self) -> Conv {
        Conv::new(self.fpn_channels, self.code_channels(), 3, 2, 1)
    }

    fn up(&self) -> Deconv {
        let k = self.config.deconv_kernel;
        Deconv {
            in_channels: self.code_channels(),
            out_channels: self.fpn_channels,
            kernel: k,
            stride: 2,
            padding: (k - 2) / 2,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        for i in 0..LEVELS {
            let l = level_name(i);
            for (j, b) in self.blocks().iter().enumerate() {
                b.init(store, &format!("enc{l}.res{j}"), rng)?;
            }
            self.down().init(store, &format!("enc{l}.down"), rng)?;
            self.up().init(store, &format!("dec{l}.up"), rng)?;
            for (j, b) in self.blocks().iter().enumerate() {
                b.init(store, &format!("dec{l}.res{j}"), rng)?;
            }
        }
        Ok(())
    }

    /// Encode one level `[B, C_f, s, s]` to `[B, C, s/2, s/2]`.
    pub fn encode_level(&self, g: &Graph, store: &ParameterStore, level: usize, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 4 || shape[2] < 2 || shape[3] < 2 {
            return Err(Error::invalid(format!(
                "cannot encode pyramid level of shape {shape:?}: spatial size must be at least 2"
            )));
        }
        let l = level_name(level);
        let mut h = x;
        for (j, b) in self.blocks().iter().enumerate() {
            h = b.forward(g, store, &format!("enc{l}.res{j}"), h)?;
        }
        self.down().forward(g, store, &format!("enc{l}.down"), h)
    }

    /// Decode one level `[B, C, s/2, s/2]` back to `[B, C_f, s, s]`.
    pub fn decode_level(&self, g: &Graph, store: &ParameterStore, level: usize, z: Var) -> Result<Var> {
        let shape = g.shape(z);
        let half = self.rate.encoded_sizes[level];
        let expected = [shape.first().copied().unwrap_or(0), self.code_channels(), half, half];
        if shape.len() != 4 || shape[1..] != expected[1..] {
            return Err(Error::shape("decode (received level)", &shape, &expected));
        }
        let l = level_name(level);
        let mut h = self.up().forward(g, store, &format!("dec{l}.up"), z)?;
        h = g.leaky_relu(h, crate::numeric::LEAKY_SLOPE);
        for (j, b) in self.blocks().iter().enumerate() {
            h = b.forward(g, store, &format!("dec{l}.res{j}"), h)?;
        }
        Ok(h)
    }

    pub fn encode(&self, g: &Graph, store: &ParameterStore, pyramid: &Pyramid) -> Result<Pyramid> {
        check_levels(&pyramid.shapes(g), 2)?;
        let levels = pyramid
            .levels
            .iter()
            .enumerate()
            .map(|(i, &x)| self.encode_level(g, store, i, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Pyramid { levels })
    }

    pub fn decode(&self, g: &Graph, store: &ParameterStore, received: &Pyramid) -> Result<Pyramid> {
        check_levels(&received.shapes(g), 1)?;
        let levels = received
            .levels
            .iter()
            .enumerate()
            .map(|(i, &z)| self.decode_level(g, store, i, z))
            .collect::<Result<Vec<_>>>()?;
        Ok(Pyramid { levels })
    }

    /// Tensor-level encode on an inference graph.
    pub fn encode_tensors(&self, store: &ParameterStore, pyramid: &FeaturePyramid) -> Result<EncodedPyramid> {
        let g = Graph::inference();
        let p = Pyramid { levels: pyramid.levels().iter().map(|t| g.constant(t.clone())).collect() };
        EncodedPyramid::new(self.encode(&g, store, &p)?.values(&g))
    }

    /// Tensor-level decode on an inference graph.
    pub fn decode_tensors(&self, store: &ParameterStore, received: &EncodedPyramid) -> Result<FeaturePyramid> {
        let g = Graph::inference();
        let p = Pyramid { levels: received.levels().iter().map(|t| g.constant(t.clone())).collect() };
        self.decode(&g, store, &p)?.to_feature_pyramid(&g)
    }

    /// Normalize and send the codes through `channel`. `image_seeds[b]` seeds the
    /// channel realizations of batch row `b`; each scale gets its own derived seed.
    pub fn transmit(
        &self,
        g: &Graph,
        encoded: &Pyramid,
        channel: &ChannelConfig,
        image_seeds: &[u64],
    ) -> Result<Transmitted> {
        transmit_pyramid(g, encoded, channel, image_seeds, self.config.power, self.config.transmit)
    }
}

/// Received codes plus the per-block fading gains (`gains[level][row]`; one level in
/// joint mode).
#[derive(Clone, Debug)]
pub struct Transmitted {
    pub pyramid: Pyramid,
    pub gains: Vec<Vec<Complex64>>,
    /// Complex symbols per image for each transmitted block.
    pub symbols: Vec<usize>,
}

/// Flatten each scale per image, power-normalize to `power`, pass through the
/// channel and reshape back. Output shapes equal input shapes.
pub fn transmit_pyramid(
    g: &Graph,
    encoded: &Pyramid,
    channel: &ChannelConfig,
    image_seeds: &[u64],
    power: f64,
    mode: TransmitMode,
) -> Result<Transmitted> {
    let shapes = encoded.shapes(g);
    check_levels(&shapes, 1)?;
    let batch = shapes[0][0];
    if image_seeds.len() != batch {
        return Err(Error::invalid(format!("{} channel seeds for a batch of {batch}", image_seeds.len())));
    }
    let flat = encoded
        .levels
        .iter()
        .zip(&shapes)
        .map(|(&v, s)| g.reshape(v, &[batch, s[1] * s[2] * s[3]]))
        .collect::<Result<Vec<_>>>()?;
    let widths: Vec<usize> = shapes.iter().map(|s| s[1] * s[2] * s[3]).collect();
    let send = |x: Var, block: u64| -> Result<(Var, Vec<Complex64>)> {
        let z = g.power_normalize_rows(x, power)?;
        let seeds: Vec<u64> = image_seeds.iter().map(|&s| mix_seed(s, &[block])).collect();
        g.channel_rows(z, channel, &seeds)
    };
    let (received, gains, symbols) = match mode {
        TransmitMode::PerScale => {
            let mut out = Vec::with_capacity(LEVELS);
            let mut gains = Vec::with_capacity(LEVELS);
            for (i, &x) in flat.iter().enumerate() {
                let (y, gi) = send(x, i as u64)?;
                out.push(y);
                gains.push(gi);
            }
            (out, gains, widths.iter().map(|w| w.div_ceil(2)).collect())
        }
        TransmitMode::Joint => {
            let mut all = flat[0];
            for &x in &flat[1..] {
                all = g.concat_cols(all, x)?;
            }
            let (y, gi) = send(all, LEVELS as u64)?;
            let mut out = Vec::with_capacity(LEVELS);
            let mut start = 0;
            for &w in &widths {
                out.push(g.slice_cols(y, start, start + w)?);
                start += w;
            }
            (out, vec![gi], vec![widths.iter().sum::<usize>().div_ceil(2)])
        }
    };
    let levels = received.into_iter().zip(&shapes).map(|(y, s)| g.reshape(y, s)).collect::<Result<Vec<_>>>()?;
    Ok(Transmitted { pyramid: Pyramid { levels }, gains, symbols })
}

impl CountOps for Codec {
    fn layer_ops(&self) -> Vec<LayerOp> {
        let mut ops = Vec::new();
        for &s in &self.sizes {
            for b in self.blocks() {
                ops.extend(b.ops(s, s));
            }
            ops.push(self.down().op(s, s));
            ops.push(self.up().op(s / 2, s / 2));
            for b in self.blocks() {
                ops.extend(b.ops(s, s));
            }
        }
        ops
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn codec(channels_ratio: Ratio) -> Codec {
        let sizes = vec![32, 16, 8, 4, 2];
        let rate = channels_for_ratio(channels_ratio, 128, &sizes).unwrap();
        Codec::new(CodecConfig::default(), rate, 8, sizes).unwrap()
    }

    fn random_pyramid(rng: &mut ChaCha8Rng, c: usize) -> FeaturePyramid {
        FeaturePyramid::new(
            [32, 16, 8, 4, 2].iter().map(|&s| Tensor::rand_uniform(&[2, c, s, s], -1.0, 1.0, rng)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn shapes_round_trip() {
        let c = codec(Ratio::new(1, 24).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::new();
        c.init(&mut store, &mut rng).unwrap();
        let p = random_pyramid(&mut rng, 8);
        let e = c.encode_tensors(&store, &p).unwrap();
        assert_eq!(e.levels()[1].shape(), &[2, 12, 8, 8]);
        let d = c.decode_tensors(&store, &e).unwrap();
        assert_eq!(d.sizes(), p.sizes());
        assert_eq!(d.channels(), 8);
    }

    #[test]
    fn decoder_rejects_foreign_geometry() {
        let c = codec(Ratio::new(1, 24).unwrap());
        let mut store = ParameterStore::new();
        c.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let wrong =
            EncodedPyramid::new([16, 8, 4, 2, 1].iter().map(|&s| Tensor::zeros(&[1, 5, s, s])).collect()).unwrap();
        assert!(c.decode_tensors(&store, &wrong).is_err());
    }

    #[test]
    fn noiseless_transmission_sums_to_k() {
        let c = codec(Ratio::new(1, 12).unwrap());
        let g = Graph::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let levels = c
            .rate
            .encoded_sizes
            .iter()
            .map(|&s| g.constant(Tensor::rand_uniform(&[1, 24, s, s], -1.0, 1.0, &mut rng)))
            .collect();
        let cfg = ChannelConfig::noiseless(ChannelKind::Awgn, 1.0).unwrap();
        let t = c.transmit(&g, &Pyramid { levels }, &cfg, &[4]).unwrap();
        assert_eq!(t.symbols.iter().sum::<usize>(), c.rate.k);
        for v in t.pyramid.values(&g) {
            let p: f64 = v.data().iter().map(|x| x * x).sum::<f64>() / (v.len() as f64 / 2.0);
            assert!((p - 1.0).abs() < 1e-10);
        }
    }
}
