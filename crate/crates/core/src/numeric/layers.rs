//! Parameterised building blocks: convolution, residual block, dense layer.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::codec::complexity::LayerOp;
use crate::error::{Error, Result};

/// Negative-side slope of the leaky rectifier used everywhere.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Square-kernel convolution with bias, stored as `{prefix}.w` / `{prefix}.b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv { in_channels, out_channels, kernel, stride, padding }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, prefix: &str, rng: &mut R) -> Result<()> {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        store.init_weight(
            format!("{prefix}.w"),
            &[self.out_channels, self.in_channels, self.kernel, self.kernel],
            fan_in,
            rng,
        )?;
        store.init_zeros(format!("{prefix}.b"), &[self.out_channels])
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
        let w = g.param(store, &format!("{prefix}.w"))?;
        let b = g.param(store, &format!("{prefix}.b"))?;
        g.conv2d(x, w, b, self.stride, self.padding)
    }

    pub fn out_size(&self, size: usize) -> usize {
        super::conv::conv_out_size(size, self.kernel, self.stride, self.padding)
    }

    pub fn op(&self, in_h: usize, in_w: usize) -> LayerOp {
        LayerOp::Conv {
            cin: self.in_channels,
            cout: self.out_channels,
            kernel: self.kernel,
            out_h: self.out_size(in_h),
            out_w: self.out_size(in_w),
        }
    }
}

/// Transposed convolution, weight layout `[Cin, Cout, K, K]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Deconv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Deconv {
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, prefix: &str, rng: &mut R) -> Result<()> {
        // Each output pixel receives in_channels * (kernel / stride)^2 contributions.
        let per_axis = (self.kernel / self.stride).max(1);
        let fan_in = self.in_channels * per_axis * per_axis;
        store.init_weight(
            format!("{prefix}.w"),
            &[self.in_channels, self.out_channels, self.kernel, self.kernel],
            fan_in,
            rng,
        )?;
        store.init_zeros(format!("{prefix}.b"), &[self.out_channels])
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
        let w = g.param(store, &format!("{prefix}.w"))?;
        let b = g.param(store, &format!("{prefix}.b"))?;
        g.deconv2d(x, w, b, self.stride, self.padding)
    }

    pub fn out_size(&self, size: usize) -> usize {
        super::conv::deconv_out_size(size, self.kernel, self.stride, self.padding)
    }

    pub fn op(&self, in_h: usize, in_w: usize) -> LayerOp {
        LayerOp::Deconv {
            cin: self.in_channels,
            cout: self.out_channels,
            kernel: self.kernel,
            in_h,
            in_w,
            out_h: self.out_size(in_h),
            out_w: self.out_size(in_w),
        }
    }
}

/// Two 3x3 convolutions with a skip connection:
/// `act(conv2(act(conv1(x))) + skip(x))`.
///
/// The skip is the identity when shape is preserved, otherwise a strided 1x1 projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub slope: f64,
}

impl ResidualBlock {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ResidualBlock { in_channels, out_channels, stride, slope: LEAKY_SLOPE }
    }

    pub fn has_projection(&self) -> bool {
        self.in_channels != self.out_channels || self.stride != 1
    }

    pub fn conv1(&self) -> Conv {
        Conv::new(self.in_channels, self.out_channels, 3, self.stride, 1)
    }

    pub fn conv2(&self) -> Conv {
        Conv::new(self.out_channels, self.out_channels, 3, 1, 1)
    }

    pub fn projection(&self) -> Conv {
        Conv::new(self.in_channels, self.out_channels, 1, self.stride, 0)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, prefix: &str, rng: &mut R) -> Result<()> {
        self.conv1().init(store, &format!("{prefix}.conv1"), rng)?;
        self.conv2().init(store, &format!("{prefix}.conv2"), rng)?;
        // Start the residual branch small so stacked blocks begin near the skip path.
        let name = format!("{prefix}.conv2.w");
        let damped = store.get(&name)?.scale(0.5);
        store.set(&name, damped)?;
        if self.has_projection() {
            self.projection().init(store, &format!("{prefix}.proj"), rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::shape("residual_block (input channels)", &shape, &[self.in_channels]));
        }
        let h = self.conv1().forward(g, store, &format!("{prefix}.conv1"), x)?;
        let h = g.leaky_relu(h, self.slope);
        let h = self.conv2().forward(g, store, &format!("{prefix}.conv2"), h)?;
        let skip =
            if self.has_projection() { self.projection().forward(g, store, &format!("{prefix}.proj"), x)? } else { x };
        let sum = g.add(h, skip)?;
        Ok(g.leaky_relu(sum, self.slope))
    }

    pub fn out_size(&self, size: usize) -> usize {
        self.conv1().out_size(size)
    }

    pub fn ops(&self, in_h: usize, in_w: usize) -> Vec<LayerOp> {
        let (oh, ow) = (self.out_size(in_h), self.out_size(in_w));
        let mut ops = vec![self.conv1().op(in_h, in_w), self.conv2().op(oh, ow)];
        if self.has_projection() {
            ops.push(self.projection().op(in_h, in_w));
        }
        ops.push(LayerOp::Add { elements: self.out_channels * oh * ow });
        ops
    }
}

/// `x W + b` with `W: [inputs, outputs]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, prefix: &str, rng: &mut R) -> Result<()> {
        store.init_weight(format!("{prefix}.w"), &[self.inputs, self.outputs], self.inputs, rng)?;
        store.init_zeros(format!("{prefix}.b"), &[self.outputs])
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
        let w = g.param(store, &format!("{prefix}.w"))?;
        let b = g.param(store, &format!("{prefix}.b"))?;
        g.fully_connected(x, w, b)
    }

    pub fn op(&self, rows: usize) -> LayerOp {
        LayerOp::Dense { inputs: self.inputs, outputs: self.outputs, rows }
    }
}
