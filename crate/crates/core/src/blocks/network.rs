use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::build::{build_backbone, NetworkSpec};
use crate::blocks::graph::{Graph, ParamMut, ParamRef, Tape};
use crate::error::{shape_err, Error, Result};
use crate::ops::{global_avg_pool_spatial, global_avg_pool_spatial_backward, Linear, Matrix, Mode};
use crate::tensor::{Shape5, Tensor5};

/// Per-frame classifier: spatial average pool, dropout, shared linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub fc: Linear,
    pub dropout: f64,
}

/// Clip logits and the per-frame logits they average.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    /// `N x K`
    pub logits: Matrix,
    /// `(N * T) x K`, row `n * T + t`.
    pub per_frame: Matrix,
    pub frames: usize,
}

impl NetOutput {
    pub fn frame_logits(&self, n: usize, t: usize) -> &[f64] {
        self.per_frame.row(n * self.frames + t)
    }
}

/// Recorded forward pass of a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetTape {
    pub graph: Tape,
    pooled: Matrix,
    mask: Option<Vec<f64>>,
    feature_shape: Shape5,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub graph: Graph,
    pub head: Head,
}

/// Average of `values` that does not depend on their order.
pub fn order_free_mean(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn make_network(spec: &NetworkSpec) -> Result<Network> {
    let (graph, c_final) = build_backbone(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6865_6164);
    let mut fc = Linear::zeros(c_final, spec.num_classes);
    let bound = 1.0 / libm::sqrt(c_final as f64);
    for w in &mut fc.weight {
        *w = rng.random_range(-bound..bound);
    }
    let net = Network { spec: spec.clone(), graph, head: Head { fc, dropout: spec.dropout } };
    net.graph.infer_shapes(spec.input_shape(1))?;
    Ok(net)
}

impl Network {
    pub fn num_classes(&self) -> usize {
        self.head.fc.out_features
    }

    /// Full forward pass. `dropout_rng` is only drawn from in train mode
    /// with a non-zero dropout rate.
    pub fn forward(
        &self,
        input: &Tensor5,
        mode: Mode,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<(NetOutput, NetTape)> {
        let tape = self.graph.forward(input, mode)?;
        let feat = tape.output();
        let fs = feat.shape();
        let pooled_t = global_avg_pool_spatial(feat)?;
        // rows (n, t), columns channels
        let mut pooled = Matrix::zeros(fs.n * fs.t, fs.c);
        for n in 0..fs.n {
            for c in 0..fs.c {
                for t in 0..fs.t {
                    pooled.data[(n * fs.t + t) * fs.c + c] = pooled_t.get(n, c, t, 0, 0);
                }
            }
        }
        let p = self.head.dropout;
        let mask = match (mode, dropout_rng) {
            (Mode::Train, Some(rng)) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let m: Vec<f64> = (0..pooled.data.len())
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect();
                pooled.data.iter_mut().zip(&m).for_each(|(x, k)| *x *= k);
                Some(m)
            }
            _ => None,
        };
        let per_frame = self.head.fc.forward(&pooled)?;
        let k = self.num_classes();
        let mut logits = Matrix::zeros(fs.n, k);
        let mut buf = vec![0.0; fs.t];
        for n in 0..fs.n {
            for j in 0..k {
                for (t, b) in buf.iter_mut().enumerate() {
                    *b = per_frame.data[(n * fs.t + t) * k + j];
                }
                logits.data[n * k + j] = order_free_mean(&mut buf);
            }
        }
        let out = NetOutput { logits, per_frame, frames: fs.t };
        Ok((out, NetTape { graph: tape, pooled, mask, feature_shape: fs }))
    }

    /// Eval-mode logits.
    pub fn predict(&self, input: &Tensor5) -> Result<NetOutput> {
        Ok(self.forward(input, Mode::Eval, None)?.0)
    }

    /// Train-mode forward that also folds batch statistics into the running ones.
    pub fn forward_train(&mut self, input: &Tensor5, dropout_rng: &mut dyn RngCore) -> Result<(NetOutput, NetTape)> {
        let r = self.forward(input, Mode::Train, Some(dropout_rng))?;
        self.graph.apply_bn_stats(&r.1.graph);
        Ok(r)
    }

    /// Back-propagate the gradient of the loss w.r.t. the clip logits.
    pub fn backward(&mut self, tape: &NetTape, grad_logits: &Matrix) -> Result<Tensor5> {
        let fs = tape.feature_shape;
        let k = self.num_classes();
        if grad_logits.rows != fs.n || grad_logits.cols != k {
            return Err(shape_err("network grad_logits", (fs.n, k), (grad_logits.rows, grad_logits.cols)));
        }
        let inv_t = 1.0 / fs.t as f64;
        let mut g_frame = Matrix::zeros(fs.n * fs.t, k);
        for n in 0..fs.n {
            for t in 0..fs.t {
                for j in 0..k {
                    g_frame.data[(n * fs.t + t) * k + j] = grad_logits.data[n * k + j] * inv_t;
                }
            }
        }
        let mut g_pooled = self.head.fc.backward(&tape.pooled, &g_frame)?;
        if let Some(mask) = &tape.mask {
            g_pooled.data.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        let mut g_pool_t = Tensor5::zeros(Shape5::new(fs.n, fs.c, fs.t, 1, 1))?;
        for n in 0..fs.n {
            for c in 0..fs.c {
                for t in 0..fs.t {
                    g_pool_t.set(n, c, t, 0, 0, g_pooled.data[(n * fs.t + t) * fs.c + c]);
                }
            }
        }
        let g_feat = global_avg_pool_spatial_backward(fs, &g_pool_t)?;
        self.graph.backward(&tape.graph, g_feat)
    }

    pub fn zero_grad(&mut self) {
        self.graph.zero_grad();
        self.head.fc.zero_grad();
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut p = self.graph.params_mut();
        let fc = &mut self.head.fc;
        p.push(ParamMut { name: "head.fc.weight".into(), value: &mut fc.weight, grad: &mut fc.grad_weight });
        p.push(ParamMut { name: "head.fc.bias".into(), value: &mut fc.bias, grad: &mut fc.grad_bias });
        p
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut p = self.graph.params();
        let fc = &self.head.fc;
        p.push(ParamRef { name: "head.fc.weight".into(), value: &fc.weight, grad: &fc.grad_weight });
        p.push(ParamRef { name: "head.fc.bias".into(), value: &fc.bias, grad: &fc.grad_bias });
        p
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Check that `input` matches the spec's channels and spatial size.
    pub fn check_input(&self, input: &Tensor5) -> Result<()> {
        let s = input.shape();
        let e = self.spec.input_shape(s.n).with_c(self.spec.in_channels);
        if s.c != e.c || s.h != e.h || s.w != e.w {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: alloc::format!("{:?}", e),
                found: alloc::format!("{:?}", s),
            });
        }
        Ok(())
    }
}
