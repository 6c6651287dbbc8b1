//! Exact parameter and arithmetic-operation counts from layer dimensions.

use std::ops::{Add, AddAssign};

/// One countable layer application (per image).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerOp {
    Conv {
        cin: usize,
        cout: usize,
        kernel: usize,
        out_h: usize,
        out_w: usize,
    },
    Deconv {
        cin: usize,
        cout: usize,
        kernel: usize,
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        rows: usize,
    },
    /// Matrix product without bias.
    Matmul {
        inputs: usize,
        outputs: usize,
        rows: usize,
    },
    /// Elementwise sum of two tensors (skip connections, top-down merges).
    Add {
        elements: usize,
    },
}

/// Parameter count and arithmetic cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Complexity {
    pub parameters: u64,
    pub additions: u64,
    pub multiplications: u64,
}

impl Add for Complexity {
    type Output = Complexity;
    fn add(self, o: Complexity) -> Complexity {
        Complexity {
            parameters: self.parameters + o.parameters,
            additions: self.additions + o.additions,
            multiplications: self.multiplications + o.multiplications,
        }
    }
}

impl AddAssign for Complexity {
    fn add_assign(&mut self, o: Complexity) {
        *self = *self + o;
    }
}

impl LayerOp {
    /// Multiplications are one per weight tap; additions are the multiplications
    /// minus one per output value. Biases count as parameters only.
    pub fn complexity(&self) -> Complexity {
        let c = |params: usize, mults: usize, outputs: usize| Complexity {
            parameters: params as u64,
            multiplications: mults as u64,
            additions: (mults - outputs) as u64,
        };
        match *self {
            LayerOp::Conv { cin, cout, kernel, out_h, out_w } => c(
                cout * cin * kernel * kernel + cout,
                cout * cin * kernel * kernel * out_h * out_w,
                cout * out_h * out_w,
            ),
            LayerOp::Deconv { cin, cout, kernel, in_h, in_w, out_h, out_w } => {
                c(cin * cout * kernel * kernel + cout, cin * cout * kernel * kernel * in_h * in_w, cout * out_h * out_w)
            }
            LayerOp::Dense { inputs, outputs, rows } => {
                c(inputs * outputs + outputs, rows * inputs * outputs, rows * outputs)
            }
            LayerOp::Matmul { inputs, outputs, rows } => c(inputs * outputs, rows * inputs * outputs, rows * outputs),
            LayerOp::Add { elements } => Complexity { parameters: 0, additions: elements as u64, multiplications: 0 },
        }
    }
}

/// Sum of per-layer counts.
pub fn count_complexity(ops: &[LayerOp]) -> Complexity {
    ops.iter().map(LayerOp::complexity).fold(Complexity::default(), Add::add)
}

/// Anything whose forward pass decomposes into countable layers.
pub trait CountOps {
    fn layer_ops(&self) -> Vec<LayerOp>;

    fn complexity(&self) -> Complexity {
        count_complexity(&self.layer_ops())
    }
}

/// Reference values for the full-scale system (parameters, additions, multiplications).
/// Documented for comparison only; the desk-scale model is orders of magnitude smaller.
pub const FULL_SCALE_REFERENCE: Complexity =
    Complexity { parameters: 51_000_000, additions: 3_900_000_000, multiplications: 3_800_000_000 };

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_parameter_count() {
        let op = LayerOp::Conv { cin: 3, cout: 16, kernel: 3, out_h: 8, out_w: 8 };
        let c = op.complexity();
        assert_eq!(c.parameters, 448);
        assert_eq!(c.multiplications, 16 * 27 * 64);
        assert_eq!(c.additions, 16 * 26 * 64);
    }
}
