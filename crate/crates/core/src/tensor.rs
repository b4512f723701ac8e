//! Dense rank-5 tensors laid out as (batch, channel, time, height, width).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// Extents of a rank-5 tensor in `N, C, T, H, W` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape5 {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape5 {
    pub const fn new(n: usize, c: usize, t: usize, h: usize, w: usize) -> Self {
        Self { n, c, t, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.t * self.h * self.w
    }

    /// Elements in one `(t, h, w)` volume of a single channel.
    pub const fn volume(&self) -> usize {
        self.t * self.h * self.w
    }

    pub const fn frame(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 5] {
        [self.n, self.c, self.t, self.h, self.w]
    }

    pub fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }

    #[inline]
    pub const fn offset(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> usize {
        (((n * self.c + c) * self.t + t) * self.h + h) * self.w + w
    }
}

impl From<[usize; 5]> for Shape5 {
    fn from(d: [usize; 5]) -> Self {
        Self::new(d[0], d[1], d[2], d[3], d[4])
    }
}

/// Row-major `f64` storage with `W` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5 {
    shape: Shape5,
    data: Vec<f64>,
}

impl Tensor5 {
    pub fn zeros(shape: impl Into<Shape5>) -> Result<Self> {
        let shape = shape.into();
        check_nonempty(&shape)?;
        Ok(Self { shape, data: vec![0.0; shape.numel()] })
    }

    pub fn full(shape: impl Into<Shape5>, value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.fill(value);
        Ok(t)
    }

    pub fn from_vec(shape: impl Into<Shape5>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_nonempty(&shape)?;
        if data.len() != shape.numel() {
            return Err(shape_err("Tensor5::from_vec", shape.numel(), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(
        shape: impl Into<Shape5>,
        mut f: impl FnMut([usize; 5]) -> f64,
    ) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let s = t.shape;
        let mut i = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                for tt in 0..s.t {
                    for h in 0..s.h {
                        for w in 0..s.w {
                            t.data[i] = f([n, c, tt, h, w]);
                            i += 1;
                        }
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.offset(n, c, t, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, t: usize, h: usize, w: usize, v: f64) {
        let o = self.shape.offset(n, c, t, h, w);
        self.data[o] = v;
    }

    /// Contiguous `(t, h, w)` volume of one channel of one sample.
    pub fn channel(&self, n: usize, c: usize) -> &[f64] {
        let v = self.shape.volume();
        let start = (n * self.shape.c + c) * v;
        &self.data[start..start + v]
    }

    pub fn channel_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let v = self.shape.volume();
        let start = (n * self.shape.c + c) * v;
        &mut self.data[start..start + v]
    }

    /// Copy of channels `[start, end)`.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape.c {
            return Err(shape_err("slice_channels", self.shape.c, (start, end)));
        }
        let shape = self.shape.with_c(end - start);
        let v = shape.volume();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            let base = (n * self.shape.c + start) * v;
            data.extend_from_slice(&self.data[base..base + (end - start) * v]);
        }
        Ok(Self { shape, data })
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Tensor5]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyShape)?.shape;
        let mut c = 0;
        for p in parts {
            let s = p.shape;
            if (s.n, s.t, s.h, s.w) != (first.n, first.t, first.h, first.w) {
                return Err(shape_err("concat_channels", first, s));
            }
            c += s.c;
        }
        let shape = first.with_c(c);
        let v = shape.volume();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for p in parts {
                let base = n * p.shape.c * v;
                data.extend_from_slice(&p.data[base..base + p.shape.c * v]);
            }
        }
        Ok(Self { shape, data })
    }

    /// Reorder frames so output frame `i` is input frame `perm[i]`.
    pub fn permute_frames(&self, perm: &[usize]) -> Result<Self> {
        let s = self.shape;
        if perm.len() != s.t || perm.iter().any(|&p| p >= s.t) {
            return Err(shape_err("permute_frames", s.t, perm.len()));
        }
        let f = s.frame();
        let mut out = self.clone();
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.channel(n, c);
                let dst = out.channel_mut(n, c);
                for (i, &p) in perm.iter().enumerate() {
                    dst[i * f..(i + 1) * f].copy_from_slice(&src[p * f..(p + 1) * f]);
                }
            }
        }
        Ok(out)
    }

    /// Gather frames by index; indices may repeat and the count may differ from `T`.
    pub fn select_frames(&self, idx: &[usize]) -> Result<Self> {
        let s = self.shape;
        if idx.is_empty() || idx.iter().any(|&p| p >= s.t) {
            return Err(shape_err("select_frames", s.t, idx));
        }
        let f = s.frame();
        let mut data = Vec::with_capacity(s.n * s.c * idx.len() * f);
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.channel(n, c);
                for &p in idx {
                    data.extend_from_slice(&src[p * f..(p + 1) * f]);
                }
            }
        }
        Self::from_vec(Shape5 { t: idx.len(), ..s }, data)
    }

    /// Stack single-sample tensors along the batch axis.
    pub fn stack_batch(items: &[&Tensor5]) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyShape)?.shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for it in items {
            if (Shape5 { n: first.n, ..it.shape }) != first {
                return Err(shape_err("stack_batch", first, it.shape));
            }
            n += it.shape.n;
            data.extend_from_slice(&it.data);
        }
        Self::from_vec(Shape5 { n, ..first }, data)
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|x| *x = f(*x));
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor5) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err("axpy", self.shape, other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor5) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, libm::fabs(a - b)))
    }
}

fn check_nonempty(s: &Shape5) -> Result<()> {
    if s.dims().contains(&0) {
        Err(Error::EmptyShape)
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_extent_rejected() {
        assert_eq!(Tensor5::zeros([1, 0, 1, 1, 1]), Err(Error::EmptyShape));
        assert!(Tensor5::from_vec([1, 1, 1, 1, 2], vec![1.0]).is_err());
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor5::from_fn([2, 3, 4, 5, 6], |[n, c, t, h, w]| {
            (n * 10000 + c * 1000 + t * 100 + h * 10 + w) as f64
        })
        .unwrap();
        assert_eq!(t.len(), 2 * 3 * 4 * 5 * 6);
        assert_eq!(t.get(1, 2, 3, 4, 5), 12345.0);
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[6], 10.0);
    }

    #[test]
    fn slice_then_concat_is_identity() {
        let t = Tensor5::from_fn([2, 5, 2, 3, 3], |[n, c, t, h, w]| {
            (n + 7 * c + 11 * t + 13 * h + 17 * w) as f64
        })
        .unwrap();
        let a = t.slice_channels(0, 2).unwrap();
        let b = t.slice_channels(2, 5).unwrap();
        assert_eq!(Tensor5::concat_channels(&[&a, &b]).unwrap(), t);
    }

    #[test]
    fn frame_permutation_roundtrip() {
        let t = Tensor5::from_fn([1, 2, 4, 2, 2], |[_, c, t, h, w]| (c * 100 + t * 10 + h * 2 + w) as f64)
            .unwrap();
        let p = t.permute_frames(&[3, 1, 0, 2]).unwrap();
        assert_eq!(p.get(0, 1, 0, 1, 1), t.get(0, 1, 3, 1, 1));
        let back = p.permute_frames(&[2, 1, 3, 0]).unwrap();
        assert_eq!(back, t);
    }
}
