//! Convolution, transposed convolution and nearest-neighbour upsampling on NCHW tensors.

use super::graph::{Graph, Var};
use super::linalg::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Spatial geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfold one `[C, H, W]` image into `[C*K*K, Ho*Wo]` patch columns.
fn im2col(x: &[f64], geo: &ConvGeometry, cols: &mut [f64]) {
    let (h, w, k, s, p) = (geo.height, geo.width, geo.kernel, geo.stride, geo.padding);
    let (ho, wo) = (geo.out_height(), geo.out_width());
    for c in 0..geo.channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s + ki) as isize - p as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p as isize;
                        *v = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `[C, H, W]` image.
fn col2im(cols: &[f64], geo: &ConvGeometry, x: &mut [f64]) {
    let (h, w, k, s, p) = (geo.height, geo.width, geo.kernel, geo.stride, geo.padding);
    let (ho, wo) = (geo.out_height(), geo.out_width());
    for c in 0..geo.channels {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn dims4(t: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::shape(op, s, &[0, 0, 0, 0])),
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_bias_grad(g: &[f64], cout: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; cout];
    for (i, chunk) in g.chunks(plane).enumerate() {
        db[i % cout] += chunk.iter().sum::<f64>();
    }
    db
}

impl Graph {
    /// Cross-correlation of `input[B, Cin, H, W]` with `weight[Cout, Cin, K, K]`.
    pub fn conv2d(&self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let [batch, cin, h, wd] = dims4(&x, "conv2d")?;
        let [cout, wcin, k, k2] = dims4(&w, "conv2d weight")?;
        if wcin != cin || k != k2 {
            return Err(Error::shape("conv2d (input vs weight)", x.shape(), w.shape()));
        }
        if b.len() != cout {
            return Err(Error::shape("conv2d (bias)", b.shape(), &[cout]));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        if k > h + 2 * padding || k > wd + 2 * padding {
            return Err(Error::invalid(format!("conv2d kernel {k} larger than padded input {h}x{wd} (+{padding})")));
        }
        let geo = ConvGeometry { channels: cin, height: h, width: wd, kernel: k, stride, padding };
        let (rows, ncols) = (geo.col_rows(), geo.col_cols());
        let in_size = cin * h * wd;
        let out_plane = ncols;
        let mut out = vec![0.0; batch * cout * out_plane];
        let mut all_cols = if geo.is_pointwise() { Vec::new() } else { vec![0.0; batch * rows * ncols] };
        for bi in 0..batch {
            let xb = &x.data()[bi * in_size..(bi + 1) * in_size];
            let cols: &[f64] = if geo.is_pointwise() {
                xb
            } else {
                let c = &mut all_cols[bi * rows * ncols..(bi + 1) * rows * ncols];
                im2col(xb, &geo, c);
                c
            };
            let ob = &mut out[bi * cout * out_plane..(bi + 1) * cout * out_plane];
            gemm(cout, rows, ncols, 1.0, w.data(), false, cols, false, 0.0, ob);
        }
        add_channel_bias(&mut out, b.data(), out_plane);
        let out_shape = vec![batch, cout, geo.out_height(), geo.out_width()];
        Ok(self.push(Tensor::from_parts(out_shape, out), &[input, weight, bias], move || {
            Box::new(move |g, mask| {
                let gd = g.data();
                let col_of = |bi: usize| -> &[f64] {
                    if geo.is_pointwise() {
                        &x.data()[bi * in_size..(bi + 1) * in_size]
                    } else {
                        &all_cols[bi * rows * ncols..(bi + 1) * rows * ncols]
                    }
                };
                let gx = mask[0].then(|| {
                    let mut dx = vec![0.0; batch * in_size];
                    let mut dcols = vec![0.0; rows * ncols];
                    for bi in 0..batch {
                        let gb = &gd[bi * cout * out_plane..(bi + 1) * cout * out_plane];
                        let dxb = &mut dx[bi * in_size..(bi + 1) * in_size];
                        if geo.is_pointwise() {
                            gemm(rows, cout, ncols, 1.0, w.data(), true, gb, false, 0.0, dxb);
                        } else {
                            gemm(rows, cout, ncols, 1.0, w.data(), true, gb, false, 0.0, &mut dcols);
                            col2im(&dcols, &geo, dxb);
                        }
                    }
                    Tensor::from_parts(x.shape().to_vec(), dx)
                });
                let gw = mask[1].then(|| {
                    let mut dw = vec![0.0; w.len()];
                    for bi in 0..batch {
                        let gb = &gd[bi * cout * out_plane..(bi + 1) * cout * out_plane];
                        gemm(cout, ncols, rows, 1.0, gb, false, col_of(bi), true, 1.0, &mut dw);
                    }
                    Tensor::from_parts(w.shape().to_vec(), dw)
                });
                let gb = mask[2].then(|| Tensor::from_parts(vec![cout], channel_bias_grad(gd, cout, out_plane)));
                vec![gx, gw, gb]
            })
        }))
    }

    /// Transposed convolution of `input[B, Cin, H, W]` with `weight[Cin, Cout, K, K]`.
    ///
    /// Output size is `(H - 1) * stride - 2 * padding + K`; the map is the adjoint of
    /// [`Graph::conv2d`] with the same weight and geometry (bias aside).
    pub fn deconv2d(&self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let [batch, cin, h, wd] = dims4(&x, "deconv2d")?;
        let [wcin, cout, k, k2] = dims4(&w, "deconv2d weight")?;
        if wcin != cin || k != k2 {
            return Err(Error::shape("deconv2d (input vs weight)", x.shape(), w.shape()));
        }
        if b.len() != cout {
            return Err(Error::shape("deconv2d (bias)", b.shape(), &[cout]));
        }
        if stride == 0 {
            return Err(Error::invalid("deconv2d stride must be positive"));
        }
        let ho = (h as isize - 1) * stride as isize - 2 * padding as isize + k as isize;
        let wo = (wd as isize - 1) * stride as isize - 2 * padding as isize + k as isize;
        if ho <= 0 || wo <= 0 {
            return Err(Error::invalid(format!("deconv2d output size {ho}x{wo} is not positive")));
        }
        let (ho, wo) = (ho as usize, wo as usize);
        // Geometry of the forward convolution this op is the adjoint of.
        let geo = ConvGeometry { channels: cout, height: ho, width: wo, kernel: k, stride, padding };
        debug_assert_eq!((geo.out_height(), geo.out_width()), (h, wd));
        let rows = geo.col_rows();
        let ncols = h * wd;
        let in_size = cin * ncols;
        let out_size = cout * ho * wo;
        let mut out = vec![0.0; batch * out_size];
        let mut cols = vec![0.0; rows * ncols];
        for bi in 0..batch {
            let xb = &x.data()[bi * in_size..(bi + 1) * in_size];
            gemm(rows, cin, ncols, 1.0, w.data(), true, xb, false, 0.0, &mut cols);
            col2im(&cols, &geo, &mut out[bi * out_size..(bi + 1) * out_size]);
        }
        add_channel_bias(&mut out, b.data(), ho * wo);
        Ok(self.push(Tensor::from_parts(vec![batch, cout, ho, wo], out), &[input, weight, bias], move || {
            Box::new(move |g, mask| {
                let gd = g.data();
                let mut dcols = vec![0.0; rows * ncols];
                let mut dx = mask[0].then(|| vec![0.0; batch * in_size]);
                let mut dw = mask[1].then(|| vec![0.0; w.len()]);
                if dx.is_some() || dw.is_some() {
                    for bi in 0..batch {
                        im2col(&gd[bi * out_size..(bi + 1) * out_size], &geo, &mut dcols);
                        if let Some(dx) = dx.as_mut() {
                            let dxb = &mut dx[bi * in_size..(bi + 1) * in_size];
                            gemm(cin, rows, ncols, 1.0, w.data(), false, &dcols, false, 0.0, dxb);
                        }
                        if let Some(dw) = dw.as_mut() {
                            let xb = &x.data()[bi * in_size..(bi + 1) * in_size];
                            gemm(cin, ncols, rows, 1.0, xb, false, &dcols, true, 1.0, dw);
                        }
                    }
                }
                let gb = mask[2].then(|| Tensor::from_parts(vec![cout], channel_bias_grad(gd, cout, ho * wo)));
                vec![
                    dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
                    dw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
                    gb,
                ]
            })
        }))
    }

    /// Nearest-neighbour 2x upsampling of `[B, C, H, W]`.
    pub fn upsample2x(&self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [b, c, h, w] = dims4(&x, "upsample2x")?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; b * c * h2 * w2];
        for plane in 0..b * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * h2 * w2..(plane + 1) * h2 * w2];
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![b, c, h2, w2], out), &[input], move || {
            Box::new(move |g, _| {
                let mut d = vec![0.0; b * c * h * w];
                for plane in 0..b * c {
                    let src = &g.data()[plane * h2 * w2..(plane + 1) * h2 * w2];
                    let dst = &mut d[plane * h * w..(plane + 1) * h * w];
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![b, c, h, w], d))]
            })
        }))
    }
}

/// Output spatial size of a convolution.
pub fn conv_out_size(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

/// Output spatial size of a transposed convolution.
pub fn deconv_out_size(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size - 1) * stride + kernel - 2 * padding
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn direct_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [b, cin, h, wd] = dims4(x, "").unwrap();
        let [cout, _, k, _] = dims4(w, "").unwrap();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; b * cout * ho * wo];
        for bi in 0..b {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.at(&[bi, ci, iy as usize, ix as usize]) * w.at(&[co, ci, ki, kj]);
                                    }
                                }
                            }
                        }
                        out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::from_parts(vec![b, cout, ho, wo], out)
    }

    #[test]
    fn identity_scaling_kernel() {
        let g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let w = g.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y), Tensor::full(&[1, 1, 3, 3], 2.0));
    }

    #[test]
    fn strided_output_shape() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let w = g.constant(Tensor::zeros(&[16, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[16]));
        assert_eq!(g.shape(g.conv2d(x, w, b, 2, 1).unwrap()), vec![1, 16, 4, 4]);
    }

    #[test]
    fn matches_direct_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (2, 0)] {
            let xt = Tensor::rand_uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut rng);
            let wt = Tensor::rand_uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
            let g = Graph::new();
            let (x, w) = (g.constant(xt.clone()), g.constant(wt.clone()));
            let b = g.constant(Tensor::zeros(&[3]));
            let y = g.value(g.conv2d(x, w, b, stride, pad).unwrap());
            let want = direct_conv(&xt, &wt, stride, pad);
            assert_eq!(y.shape(), want.shape());
            assert!(y.max_abs_diff(&want) < 1e-10);
        }
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        match g.conv2d(x, w, b, 1, 0) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![1, 2, 4, 4]);
                assert_eq!(right, vec![1, 3, 3, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn deconv_shapes_and_identity() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[1, 2, 4, 4], |i| i as f64));
        let w = g.constant(Tensor::ones(&[2, 3, 2, 2]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert_eq!(g.shape(g.deconv2d(x, w, b, 2, 0).unwrap()), vec![1, 3, 8, 8]);

        let x1 = g.constant(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 * 0.5));
        let w1 = g.constant(Tensor::ones(&[1, 1, 1, 1]));
        let b1 = g.constant(Tensor::zeros(&[1]));
        assert_eq!(g.value(g.deconv2d(x1, w1, b1, 1, 0).unwrap()), g.value(x1));
    }

    #[test]
    fn deconv_rejects_non_positive_output() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let w = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(g.deconv2d(x, w, b, 1, 1).is_err());
    }

    #[test]
    fn upsample_blocks() {
        let g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 1, 1], 7.0));
        assert_eq!(g.value(g.upsample2x(x).unwrap()), Tensor::full(&[1, 1, 2, 2], 7.0));
        let y = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        assert_eq!(g.shape(g.upsample2x(y).unwrap()), vec![1, 3, 8, 8]);
    }
}
