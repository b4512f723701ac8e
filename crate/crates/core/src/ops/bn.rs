//! Per-channel batch normalisation over `(N, T, H, W)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor5;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnLayer {
    pub channels: usize,
    /// Per-channel scaling factor (gamma).
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
    pub grad_scale: Vec<f64>,
    pub grad_shift: Vec<f64>,
}

impl BnLayer {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            grad_scale: vec![0.0; channels],
            grad_shift: vec![0.0; channels],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_scale.fill(0.0);
        self.grad_shift.fill(0.0);
    }
}

/// Values saved by a train-mode forward pass for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    pub mode: Mode,
    /// Normalised input, before scale and shift.
    pub normalized: Tensor5,
    pub inv_std: Vec<f64>,
}

fn check(input: &Tensor5, layer: &BnLayer) -> Result<()> {
    if input.shape().c != layer.channels {
        return Err(shape_err("bn channels", layer.channels, input.shape().c));
    }
    Ok(())
}

/// Batch mean and unbiased variance measured by a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

impl BnLayer {
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for c in 0..self.channels {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * stats.unbiased_var[c];
        }
    }
}

/// Normalise without touching the running statistics; train mode also
/// returns the batch statistics for [`BnLayer::update_running`].
pub fn bn_apply(input: &Tensor5, layer: &BnLayer, mode: Mode) -> Result<(Tensor5, BnCache, Option<BatchStats>)> {
    check(input, layer)?;
    let s = input.shape();
    let count = (s.n * s.volume()) as f64;
    let (mean, var, stats) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; s.c];
            let mut var = vec![0.0; s.c];
            let mut unbiased_var = vec![0.0; s.c];
            for c in 0..s.c {
                let mut sum = 0.0;
                for n in 0..s.n {
                    sum += input.channel(n, c).iter().sum::<f64>();
                }
                let mu = sum / count;
                let mut sq = 0.0;
                for n in 0..s.n {
                    sq += input.channel(n, c).iter().map(|x| (x - mu) * (x - mu)).sum::<f64>();
                }
                mean[c] = mu;
                var[c] = sq / count;
                unbiased_var[c] = if count > 1.0 { sq / (count - 1.0) } else { var[c] };
            }
            let stats = BatchStats { mean: mean.clone(), unbiased_var };
            (mean, var, Some(stats))
        }
        Mode::Eval => (layer.running_mean.clone(), layer.running_var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + layer.epsilon)).collect();
    let mut normalized = input.clone();
    let mut out = input.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let (mu, is, g, b) = (mean[c], inv_std[c], layer.scale[c], layer.shift[c]);
            let xh = normalized.channel_mut(n, c);
            xh.iter_mut().for_each(|x| *x = (*x - mu) * is);
            let y = out.channel_mut(n, c);
            y.iter_mut().zip(xh.iter()).for_each(|(y, x)| *y = g * x + b);
        }
    }
    Ok((out, BnCache { mode, normalized, inv_std }, stats))
}

/// Normalise `input`; train mode uses batch statistics and updates the running ones.
pub fn bn_forward(input: &Tensor5, layer: &mut BnLayer, mode: Mode) -> Result<(Tensor5, BnCache)> {
    let (out, cache, stats) = bn_apply(input, layer, mode)?;
    if let Some(stats) = stats {
        layer.update_running(&stats);
    }
    Ok((out, cache))
}

/// Returns the input gradient and adds scale/shift gradients into the layer's slots.
pub fn bn_backward(cache: &BnCache, layer: &mut BnLayer, grad_out: &Tensor5) -> Result<Tensor5> {
    let s = grad_out.shape();
    if s != cache.normalized.shape() {
        return Err(shape_err("bn_backward grad_out", cache.normalized.shape(), s));
    }
    let count = (s.n * s.volume()) as f64;
    let mut grad_in = grad_out.clone();
    for c in 0..s.c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for n in 0..s.n {
            let g = grad_out.channel(n, c);
            let x = cache.normalized.channel(n, c);
            sum_g += g.iter().sum::<f64>();
            sum_gx += g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        layer.grad_shift[c] += sum_g;
        layer.grad_scale[c] += sum_gx;
        let k = layer.scale[c] * cache.inv_std[c];
        for n in 0..s.n {
            let x = cache.normalized.channel(n, c);
            let gi = grad_in.channel_mut(n, c);
            match cache.mode {
                Mode::Train => {
                    let (mg, mgx) = (sum_g / count, sum_gx / count);
                    gi.iter_mut()
                        .zip(x)
                        .for_each(|(g, xh)| *g = k * (*g - mg - xh * mgx));
                }
                Mode::Eval => gi.iter_mut().for_each(|g| *g *= k),
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 5], seed: u64) -> Tensor5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor5::from_fn(shape, |_| rng.random_range(-3.0..5.0)).unwrap()
    }

    #[test]
    fn eval_identity() {
        let x = random([2, 3, 2, 2, 2], 1);
        let mut bn = BnLayer::new(3);
        bn.epsilon = 0.0;
        let (y, _) = bn_forward(&x, &mut bn, Mode::Eval).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn train_normalizes_per_channel() {
        let x = random([2, 4, 3, 5, 5], 2);
        let mut bn = BnLayer::new(4);
        bn.epsilon = 0.0;
        let (y, _) = bn_forward(&x, &mut bn, Mode::Train).unwrap();
        let s = y.shape();
        let count = (s.n * s.volume()) as f64;
        for c in 0..s.c {
            let vals: Vec<f64> = (0..s.n).flat_map(|n| y.channel(n, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / count;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let x = Tensor5::from_vec([1, 1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bn = BnLayer::new(1);
        bn_forward(&x, &mut bn, Mode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-15);
        // unbiased variance of 1..4 is 5/3
        assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn channel_mismatch() {
        let x = random([1, 2, 1, 1, 1], 3);
        assert!(bn_forward(&x, &mut BnLayer::new(3), Mode::Eval).is_err());
    }
}
