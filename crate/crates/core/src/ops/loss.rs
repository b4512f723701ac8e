//! Dense matrices for logits, the per-frame linear classifier and the loss.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// Row-major matrix; rows index samples (or sample-frames), columns classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn argmax_row(&self, r: usize) -> usize {
        argmax(self.row(r))
    }
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Mean negative log-softmax probability of the true class, and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows {
        return Err(shape_err("softmax_cross_entropy labels", logits.rows, labels.len()));
    }
    let k = logits.cols;
    let inv_n = 1.0 / logits.rows as f64;
    let mut grad = Matrix::zeros(logits.rows, k);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + libm::log(row.iter().map(|&z| libm::exp(z - m)).sum::<f64>());
        loss += (lse - row[y]) * inv_n;
        let g = grad.row_mut(r);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = libm::exp(row[j] - lse) * inv_n;
        }
        g[y] -= inv_n;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss"));
    }
    Ok((loss, grad))
}

/// Fully connected layer `y = x W^T + b`, with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
            grad_weight: vec![0.0; in_features * out_features],
            grad_bias: vec![0.0; out_features],
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.in_features {
            return Err(shape_err("linear input", self.in_features, x.cols));
        }
        let mut y = Matrix::zeros(x.rows, self.out_features);
        for r in 0..x.rows {
            let xr = x.row(r);
            for (o, yo) in y.row_mut(r).iter_mut().enumerate() {
                let w = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                *yo = self.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
        if grad_out.rows != x.rows || grad_out.cols != self.out_features {
            return Err(shape_err(
                "linear grad_out",
                (x.rows, self.out_features),
                (grad_out.rows, grad_out.cols),
            ));
        }
        let mut gx = Matrix::zeros(x.rows, self.in_features);
        for r in 0..x.rows {
            let xr = x.row(r);
            let gr = grad_out.row(r);
            for (o, &g) in gr.iter().enumerate() {
                self.grad_bias[o] += g;
                let row = o * self.in_features..(o + 1) * self.in_features;
                self.grad_weight[row.clone()]
                    .iter_mut()
                    .zip(xr)
                    .for_each(|(gw, xv)| *gw += g * xv);
                gx.row_mut(r)
                    .iter_mut()
                    .zip(&self.weight[row])
                    .for_each(|(gi, w)| *gi += g * w);
            }
        }
        Ok(gx)
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Matrix::from_vec(2, 4, vec![0.7; 8]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - libm::log(4.0)).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
        assert!((grad.row(0)[0] - (0.25 - 1.0) / 2.0).abs() < 1e-15);
        assert!((grad.row(0)[1] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_label() {
        let logits = Matrix::zeros(1, 3);
        assert_eq!(
            softmax_cross_entropy(&logits, &[3]).unwrap_err(),
            Error::LabelOutOfRange { label: 3, classes: 3 }
        );
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn linear_forward_backward() {
        let mut lin = Linear::zeros(2, 1);
        lin.weight = vec![2.0, -1.0];
        lin.bias = vec![0.5];
        let x = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(lin.forward(&x).unwrap().data, vec![2.5]);
        let gx = lin.backward(&x, &Matrix::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(gx.data, vec![2.0, -1.0]);
        assert_eq!(lin.grad_weight, vec![3.0, 4.0]);
        assert_eq!(lin.grad_bias, vec![1.0]);
    }
}
