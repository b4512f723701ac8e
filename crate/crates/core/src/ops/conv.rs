//! Grouped 3-D cross-correlation over `(T, H, W)`.
//!
//! Every block family reduces to this one kernel: a spatial-only convolution
//! is the `k_t = 1` case and grouped 3-D convolution sets `groups > 1`.
//! Each `(sample, group)` pair is lowered to an im2col matrix and one GEMM.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape5, Tensor5};

/// Geometry of one convolution. Axes are ordered `(t, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride-1, unpadded, ungrouped, bias-free convolution.
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: [1, 1, 1],
            padding: [0, 0, 0],
            groups: 1,
            bias: false,
        }
    }

    /// Per-frame `1 x k x k` convolution with "same" padding for odd `k`.
    pub fn spatial(in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self::new(in_channels, out_channels, [1, k, k]).padding([0, k / 2, k / 2])
    }

    pub fn stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::EmptyShape);
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "kernel {:?} and stride {:?} must be positive",
                self.kernel,
                self.stride
            )));
        }
        if self.groups == 0 {
            return Err(Error::InvalidConfig("groups must be at least 1".into()));
        }
        if self.in_channels % self.groups != 0 {
            return Err(Error::Divisibility {
                context: "conv input channels",
                channels: self.in_channels,
                divisor: self.groups,
            });
        }
        if self.out_channels % self.groups != 0 {
            return Err(Error::Divisibility {
                context: "conv output channels",
                channels: self.out_channels,
                divisor: self.groups,
            });
        }
        Ok(())
    }

    pub fn is_spatial_only(&self) -> bool {
        self.kernel[0] == 1 && self.padding[0] == 0 && self.stride[0] == 1
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// `C_o x (C_i / g) x k_t x k_h x k_w`
    pub fn weight_shape(&self) -> Shape5 {
        let [kt, kh, kw] = self.kernel;
        Shape5::new(self.out_channels, self.in_per_group(), kt, kh, kw)
    }

    /// Number of weight entries (bias excluded).
    pub fn weight_count(&self) -> usize {
        self.weight_shape().numel()
    }

    /// Receptive field size of one output element: `(C_i / g) k_t k_h k_w`.
    pub fn fan_in(&self) -> usize {
        self.in_per_group() * self.kernel.iter().product::<usize>()
    }

    pub fn output_shape(&self, input: Shape5) -> Result<Shape5> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(shape_err("conv input channels", self.in_channels, input.c));
        }
        let ext = [input.t, input.h, input.w];
        let mut out = [0usize; 3];
        for a in 0..3 {
            let padded = ext[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(shape_err("conv padded extent vs kernel", self.kernel, ext));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(Shape5::new(input.n, self.out_channels, out[0], out[1], out[2]))
    }

    /// Multiply-accumulates for one forward pass on `input`.
    pub fn macs(&self, input: Shape5) -> Result<u64> {
        let out = self.output_shape(input)?;
        Ok(out.numel() as u64 * self.fan_in() as u64)
    }
}

/// A convolution with its parameters and gradient slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: Tensor5,
    pub bias: Option<Vec<f64>>,
    pub grad_weight: Tensor5,
    pub grad_bias: Option<Vec<f64>>,
}

impl ConvLayer {
    pub fn zeros(spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let weight = Tensor5::zeros(spec.weight_shape())?;
        let bias = spec.bias.then(|| vec![0.0; spec.out_channels]);
        Ok(Self {
            spec,
            grad_weight: weight.clone(),
            grad_bias: bias.clone(),
            weight,
            bias,
        })
    }

    /// He-uniform initialisation, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    pub fn init<R: Rng + ?Sized>(spec: ConvSpec, rng: &mut R) -> Result<Self> {
        let mut layer = Self::zeros(spec)?;
        let bound = libm::sqrt(6.0 / spec.fan_in() as f64);
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
        Ok(layer)
    }

    pub fn with_weights(spec: ConvSpec, weights: Vec<f64>) -> Result<Self> {
        let mut layer = Self::zeros(spec)?;
        layer.weight = Tensor5::from_vec(spec.weight_shape(), weights)?;
        Ok(layer)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.data_mut().fill(0.0);
        if let Some(g) = &mut self.grad_bias {
            g.fill(0.0);
        }
    }
}

/// Gradients returned by [`conv_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor5,
    pub weight: Tensor5,
    pub bias: Option<Vec<f64>>,
}

struct Geometry {
    input: Shape5,
    output: Shape5,
    rows: usize,
    cols: usize,
    cig: usize,
    cog: usize,
    direct: bool,
}

impl Geometry {
    fn new(spec: &ConvSpec, input: Shape5) -> Result<Self> {
        let output = spec.output_shape(input)?;
        let direct = spec.kernel == [1, 1, 1] && spec.stride == [1, 1, 1] && spec.padding == [0, 0, 0];
        Ok(Self {
            input,
            output,
            rows: spec.fan_in(),
            cols: output.volume(),
            cig: spec.in_per_group(),
            cog: spec.out_per_group(),
            direct,
        })
    }
}

/// Output columns `[lo, hi)` whose input column `ow * stride + offset - pad` lies inside `[0, width)`.
fn valid_cols(out_w: usize, stride: usize, offset: usize, pad: usize, width: isize) -> (usize, usize) {
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    let end = width + pad as isize - offset as isize;
    let hi = if end <= 0 { 0 } else { (end as usize).div_ceil(stride).min(out_w) };
    (lo.min(hi), hi)
}

/// Lower one group of one sample into a `(cig * kt * kh * kw) x (T' H' W')` matrix.
fn im2col(spec: &ConvSpec, g: &Geometry, src: &[f64], col: &mut [f64]) {
    let [kt, kh, kw] = spec.kernel;
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.padding;
    let (it_n, ih_n, iw_n) = (g.input.t as isize, g.input.h as isize, g.input.w as isize);
    let (ot_n, oh_n, ow_n) = (g.output.t, g.output.h, g.output.w);
    let vol = g.input.volume();
    let mut r = 0;
    for ic in 0..g.cig {
        let chan = &src[ic * vol..(ic + 1) * vol];
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let row = &mut col[r * g.cols..(r + 1) * g.cols];
                    let mut p = 0;
                    for ot in 0..ot_n {
                        let it = (ot * st + a) as isize - pt as isize;
                        for oh in 0..oh_n {
                            let ih = (oh * sh + b) as isize - ph as isize;
                            let dst = &mut row[p..p + ow_n];
                            p += ow_n;
                            if it < 0 || it >= it_n || ih < 0 || ih >= ih_n {
                                dst.fill(0.0);
                                continue;
                            }
                            let base = ((it * ih_n + ih) * iw_n) as usize;
                            let (lo, hi) = valid_cols(ow_n, sw, c, pw, iw_n);
                            dst[..lo].fill(0.0);
                            dst[hi..].fill(0.0);
                            if lo == hi {
                                continue;
                            }
                            let first = base + lo * sw + c - pw;
                            if sw == 1 {
                                dst[lo..hi].copy_from_slice(&chan[first..first + hi - lo]);
                            } else {
                                for (i, d) in dst[lo..hi].iter_mut().enumerate() {
                                    *d = chan[first + i * sw];
                                }
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into the input layout.
fn col2im(spec: &ConvSpec, g: &Geometry, col: &[f64], dst: &mut [f64]) {
    let [kt, kh, kw] = spec.kernel;
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.padding;
    let (it_n, ih_n, iw_n) = (g.input.t as isize, g.input.h as isize, g.input.w as isize);
    let (ot_n, oh_n, ow_n) = (g.output.t, g.output.h, g.output.w);
    let vol = g.input.volume();
    let mut r = 0;
    for ic in 0..g.cig {
        let chan = &mut dst[ic * vol..(ic + 1) * vol];
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let row = &col[r * g.cols..(r + 1) * g.cols];
                    let mut p = 0;
                    for ot in 0..ot_n {
                        let it = (ot * st + a) as isize - pt as isize;
                        for oh in 0..oh_n {
                            let ih = (oh * sh + b) as isize - ph as isize;
                            let srow = &row[p..p + ow_n];
                            p += ow_n;
                            if it < 0 || it >= it_n || ih < 0 || ih >= ih_n {
                                continue;
                            }
                            let base = ((it * ih_n + ih) * iw_n) as usize;
                            let (lo, hi) = valid_cols(ow_n, sw, c, pw, iw_n);
                            if lo == hi {
                                continue;
                            }
                            let first = base + lo * sw + c - pw;
                            for (i, s) in srow[lo..hi].iter().enumerate() {
                                chan[first + i * sw] += s;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every operand slice covers the extents implied by its strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward convolution. Group `b` of the output reads only group `b` of the input.
pub fn conv_forward(input: &Tensor5, layer: &ConvLayer) -> Result<Tensor5> {
    let spec = &layer.spec;
    let geo = Geometry::new(spec, input.shape())?;
    let mut out = Tensor5::zeros(geo.output)?;
    let in_vol = geo.input.volume();
    let out_vol = geo.output.volume();
    let mut col = if geo.direct { Vec::new() } else { vec![0.0; geo.rows * geo.cols] };
    let w = layer.weight.data();
    for n in 0..geo.input.n {
        for grp in 0..spec.groups {
            let src_start = (n * geo.input.c + grp * geo.cig) * in_vol;
            let src = &input.data()[src_start..src_start + geo.cig * in_vol];
            let b: &[f64] = if geo.direct {
                src
            } else {
                im2col(spec, &geo, src, &mut col);
                &col
            };
            let dst_start = (n * geo.output.c + grp * geo.cog) * out_vol;
            let dst = &mut out.data_mut()[dst_start..dst_start + geo.cog * out_vol];
            let wg = &w[grp * geo.cog * geo.rows..(grp + 1) * geo.cog * geo.rows];
            gemm(
                geo.cog,
                geo.rows,
                geo.cols,
                wg,
                (geo.rows as isize, 1),
                b,
                (geo.cols as isize, 1),
                0.0,
                dst,
            );
        }
        if let Some(bias) = &layer.bias {
            for (oc, bv) in bias.iter().enumerate() {
                out.channel_mut(n, oc).iter_mut().for_each(|x| *x += bv);
            }
        }
    }
    Ok(out)
}

/// Analytic gradients of [`conv_forward`] with respect to input, weights and bias.
pub fn conv_backward(input: &Tensor5, layer: &ConvLayer, grad_out: &Tensor5) -> Result<ConvGrads> {
    let spec = &layer.spec;
    let geo = Geometry::new(spec, input.shape())?;
    if grad_out.shape() != geo.output {
        return Err(shape_err("conv_backward grad_out", geo.output, grad_out.shape()));
    }
    let mut grad_input = Tensor5::zeros(geo.input)?;
    let mut grad_weight = Tensor5::zeros(spec.weight_shape())?;
    let mut grad_bias = spec.bias.then(|| vec![0.0; spec.out_channels]);
    let in_vol = geo.input.volume();
    let out_vol = geo.output.volume();
    let mut col = vec![0.0; geo.rows * geo.cols];
    let mut gcol = vec![0.0; geo.rows * geo.cols];
    let w = layer.weight.data();
    for n in 0..geo.input.n {
        for grp in 0..spec.groups {
            let src_start = (n * geo.input.c + grp * geo.cig) * in_vol;
            let src = &input.data()[src_start..src_start + geo.cig * in_vol];
            let go_start = (n * geo.output.c + grp * geo.cog) * out_vol;
            let go = &grad_out.data()[go_start..go_start + geo.cog * out_vol];
            let b: &[f64] = if geo.direct {
                src
            } else {
                im2col(spec, &geo, src, &mut col);
                &col
            };
            // dW_g += dY_g * col^T
            let gw = &mut grad_weight.data_mut()[grp * geo.cog * geo.rows..(grp + 1) * geo.cog * geo.rows];
            gemm(
                geo.cog,
                geo.cols,
                geo.rows,
                go,
                (geo.cols as isize, 1),
                b,
                (1, geo.cols as isize),
                1.0,
                gw,
            );
            // dcol = W_g^T * dY_g
            let wg = &w[grp * geo.cog * geo.rows..(grp + 1) * geo.cog * geo.rows];
            let gi = &mut grad_input.data_mut()[src_start..src_start + geo.cig * in_vol];
            if geo.direct {
                gemm(
                    geo.rows,
                    geo.cog,
                    geo.cols,
                    wg,
                    (1, geo.rows as isize),
                    go,
                    (geo.cols as isize, 1),
                    0.0,
                    gi,
                );
            } else {
                gemm(
                    geo.rows,
                    geo.cog,
                    geo.cols,
                    wg,
                    (1, geo.rows as isize),
                    go,
                    (geo.cols as isize, 1),
                    0.0,
                    &mut gcol,
                );
                col2im(spec, &geo, &gcol, gi);
            }
        }
        if let Some(gb) = &mut grad_bias {
            for (oc, g) in gb.iter_mut().enumerate() {
                *g += grad_out.channel(n, oc).iter().sum::<f64>();
            }
        }
    }
    Ok(ConvGrads { input: grad_input, weight: grad_weight, bias: grad_bias })
}

/// Backward pass that also adds the parameter gradients into the layer's slots.
pub fn conv_backward_accumulate(
    input: &Tensor5,
    layer: &mut ConvLayer,
    grad_out: &Tensor5,
) -> Result<Tensor5> {
    let g = conv_backward(input, layer, grad_out)?;
    layer.grad_weight.axpy(1.0, &g.weight)?;
    if let (Some(slot), Some(gb)) = (&mut layer.grad_bias, &g.bias) {
        slot.iter_mut().zip(gb).for_each(|(s, v)| *s += v);
    }
    Ok(g.input)
}
