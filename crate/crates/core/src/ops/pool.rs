//! Elementwise activations and per-frame spatial pooling.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::tensor::{Shape5, Tensor5};

pub fn relu(input: &Tensor5) -> Tensor5 {
    let mut out = input.clone();
    out.map_inplace(|x| if x > 0.0 { x } else { 0.0 });
    out
}

/// Gradient passes where the forward *input* was strictly positive.
pub fn relu_backward(input: &Tensor5, grad_out: &Tensor5) -> Result<Tensor5> {
    if input.shape() != grad_out.shape() {
        return Err(shape_err("relu_backward", input.shape(), grad_out.shape()));
    }
    let mut g = grad_out.clone();
    g.data_mut()
        .iter_mut()
        .zip(input.data())
        .for_each(|(g, &x)| if x <= 0.0 { *g = 0.0 });
    Ok(g)
}

/// Average over `H x W` of every frame, giving `N x C x T x 1 x 1`.
pub fn global_avg_pool_spatial(input: &Tensor5) -> Result<Tensor5> {
    let s = input.shape();
    let f = s.frame();
    let inv = 1.0 / f as f64;
    let mut data = Vec::with_capacity(s.n * s.c * s.t);
    for frame in input.data().chunks_exact(f) {
        data.push(frame.iter().sum::<f64>() * inv);
    }
    Tensor5::from_vec(Shape5::new(s.n, s.c, s.t, 1, 1), data)
}

pub fn global_avg_pool_spatial_backward(input_shape: Shape5, grad_out: &Tensor5) -> Result<Tensor5> {
    let expect = Shape5::new(input_shape.n, input_shape.c, input_shape.t, 1, 1);
    if grad_out.shape() != expect {
        return Err(shape_err("avg_pool_backward", expect, grad_out.shape()));
    }
    let f = input_shape.frame();
    let inv = 1.0 / f as f64;
    let mut data = vec![0.0; input_shape.numel()];
    for (frame, g) in data.chunks_exact_mut(f).zip(grad_out.data()) {
        frame.fill(g * inv);
    }
    Tensor5::from_vec(input_shape, data)
}

/// Per-frame max pooling geometry (`k x k`, stride `s`, padding `p`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaxPoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MaxPoolSpec {
    /// The ResNet stem pool: 3x3, stride 2, padding 1.
    pub const STEM: Self = Self { kernel: 3, stride: 2, padding: 1 };

    pub fn output_shape(&self, input: Shape5) -> Result<Shape5> {
        let ext = |x: usize| -> Result<usize> {
            let padded = x + 2 * self.padding;
            if padded < self.kernel {
                return Err(shape_err("max_pool extent", self.kernel, x));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok(Shape5 { h: ext(input.h)?, w: ext(input.w)?, ..input })
    }
}

/// Returns the pooled tensor and, per output element, the flat input index it came from.
pub fn max_pool_spatial(input: &Tensor5, spec: MaxPoolSpec) -> Result<(Tensor5, Vec<usize>)> {
    let s = input.shape();
    let os = spec.output_shape(s)?;
    let mut out = Tensor5::zeros(os)?;
    let mut argmax = vec![0usize; os.numel()];
    let (h_n, w_n) = (s.h as isize, s.w as isize);
    let mut o = 0;
    for frame in 0..s.n * s.c * s.t {
        let base = frame * s.frame();
        for oh in 0..os.h {
            for ow in 0..os.w {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for kh in 0..spec.kernel {
                    let ih = (oh * spec.stride + kh) as isize - spec.padding as isize;
                    if ih < 0 || ih >= h_n {
                        continue;
                    }
                    for kw in 0..spec.kernel {
                        let iw = (ow * spec.stride + kw) as isize - spec.padding as isize;
                        if iw < 0 || iw >= w_n {
                            continue;
                        }
                        let i = base + (ih * w_n + iw) as usize;
                        let v = input.data()[i];
                        if v > best || best_i == usize::MAX {
                            best = v;
                            best_i = i;
                        }
                    }
                }
                out.data_mut()[o] = best;
                argmax[o] = best_i;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool_spatial_backward(
    input_shape: Shape5,
    argmax: &[usize],
    grad_out: &Tensor5,
) -> Result<Tensor5> {
    if argmax.len() != grad_out.len() {
        return Err(shape_err("max_pool_backward", argmax.len(), grad_out.len()));
    }
    let mut g = Tensor5::zeros(input_shape)?;
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        g.data_mut()[i] += v;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor5::from_vec([1, 1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor5::full([1, 1, 1, 1, 3], 1.0).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn pooling_a_constant_frame() {
        let x = Tensor5::full([1, 2, 3, 4, 5], 5.0).unwrap();
        let p = global_avg_pool_spatial(&x).unwrap();
        assert_eq!(p.shape(), Shape5::new(1, 2, 3, 1, 1));
        assert!(p.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn avg_pool_keeps_frames_separate() {
        let x = Tensor5::from_fn([1, 1, 2, 2, 2], |[_, _, t, _, _]| t as f64).unwrap();
        let p = global_avg_pool_spatial(&x).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0]);
    }

    #[test]
    fn max_pool_stem_geometry() {
        let s = MaxPoolSpec::STEM.output_shape(Shape5::new(1, 64, 8, 112, 112)).unwrap();
        assert_eq!((s.h, s.w), (56, 56));
        let x = Tensor5::from_fn([1, 1, 1, 4, 4], |[_, _, _, h, w]| (h * 4 + w) as f64).unwrap();
        let (y, am) = max_pool_spatial(&x, MaxPoolSpec::STEM).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
        let g = max_pool_spatial_backward(x.shape(), &am, &Tensor5::full(y.shape(), 1.0).unwrap()).unwrap();
        assert_eq!(g.data().iter().sum::<f64>(), 4.0);
        assert_eq!(g.get(0, 0, 0, 3, 3), 1.0);
    }
}
