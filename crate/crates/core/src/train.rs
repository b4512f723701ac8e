//! Mini-batch SGD with momentum and step decay, plus clip-level evaluation.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{sample_segments, Network, ParamMut};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ops::{softmax_cross_entropy, Matrix, Mode};
use crate::tensor::Tensor5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs (0-based) at whose start the rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    /// Overrides the network's dropout rate when set.
    pub dropout: Option<f64>,
    /// Frames sampled per clip.
    pub segments: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            milestones: vec![15, 25],
            lr_decay: 0.1,
            dropout: None,
            segments: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 || self.segments == 0 {
            return bad("batch size and segment count must be positive");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight decay be non-negative");
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad("milestones must be strictly increasing");
        }
        if self.dropout.is_some_and(|p| !(0.0..1.0).contains(&p)) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * libm::pow(self.lr_decay, k as f64)
    }
}

/// Heavy-ball SGD: `v = mu * v + g + wd * w`, `w -= lr * v`.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [ParamMut<'_>], lr: f64) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            for ((w, g), v) in p.value.iter_mut().zip(p.grad.iter()).zip(v.iter_mut()) {
                *v = self.momentum * *v + *g + self.weight_decay * *w;
                *w -= lr * *v;
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    /// Empty when no evaluation set was given.
    pub eval_accuracy: Vec<f64>,
    pub lr: Vec<f64>,
    /// Filled by callers that have a clock.
    pub wall_seconds: f64,
}

/// Frames of `clip` picked by segment sampling.
pub fn sample_clip<R: Rng + ?Sized>(clip: &Tensor5, segments: usize, mode: Mode, rng: &mut R) -> Result<Tensor5> {
    let idx = sample_segments(clip.shape().t, segments, mode, rng);
    clip.select_frames(&idx)
}

/// Train `net` in place. `on_epoch` sees the epoch index and the history so far.
pub fn train(
    net: &mut Network,
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &TrainHistory),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    if data.num_classes() > net.num_classes() {
        return Err(Error::LabelOutOfRange { label: data.num_classes() - 1, classes: net.num_classes() });
    }
    if let Some(p) = cfg.dropout {
        net.head.dropout = p;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut hist = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let clips = batch
                .iter()
                .map(|&i| sample_clip(&data.samples[i].clip, cfg.segments, Mode::Train, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let input = Tensor5::stack_batch(&clips.iter().collect::<Vec<_>>())?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.samples[i].label).collect();
            net.zero_grad();
            let (out, tape) = net.forward_train(&input, &mut rng)?;
            let (loss, grad) = softmax_cross_entropy(&out.logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            net.backward(&tape, &grad)?;
            sgd.step(&mut net.params_mut(), lr);
            loss_sum += loss * batch.len() as f64;
            correct += (0..batch.len()).filter(|&r| out.logits.argmax_row(r) == labels[r]).count();
        }
        hist.train_loss.push(loss_sum / data.len() as f64);
        hist.train_accuracy.push(correct as f64 / data.len() as f64);
        hist.lr.push(lr);
        if let Some(e) = eval {
            hist.eval_accuracy.push(evaluate(net, e, cfg.segments)?.accuracy);
        }
        on_epoch(epoch, &hist);
    }
    Ok(hist)
}

/// Anything that maps a batch of clips to `N x K` logits.
pub trait ClipClassifier {
    fn clip_logits(&self, input: &Tensor5) -> Result<Matrix>;
}

impl ClipClassifier for Network {
    fn clip_logits(&self, input: &Tensor5) -> Result<Matrix> {
        Ok(self.predict(input)?.logits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Indexed by class; `None` for classes absent from the set.
    pub per_class: Vec<Option<f64>>,
    pub predictions: Vec<usize>,
}

const EVAL_BATCH: usize = 32;

/// Top-1 accuracy with deterministic middle-of-segment frames.
pub fn evaluate(model: &impl ClipClassifier, data: &Dataset, segments: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut predictions = Vec::with_capacity(data.len());
    for batch in data.samples.chunks(EVAL_BATCH) {
        let clips = batch
            .iter()
            .map(|s| sample_clip(&s.clip, segments, Mode::Eval, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let logits = model.clip_logits(&Tensor5::stack_batch(&clips.iter().collect::<Vec<_>>())?)?;
        predictions.extend((0..batch.len()).map(|r| logits.argmax_row(r)));
    }
    let k = data.num_classes();
    let (mut hits, mut seen) = (vec![0usize; k], vec![0usize; k]);
    for (s, &p) in data.samples.iter().zip(&predictions) {
        seen[s.label] += 1;
        hits[s.label] += (p == s.label) as usize;
    }
    let accuracy = hits.iter().sum::<usize>() as f64 / data.len() as f64;
    let per_class = hits
        .iter()
        .zip(&seen)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    Ok(EvalReport { accuracy, per_class, predictions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{BlockKind, NetworkSpec};
    use crate::data::{gen_synthetic, SyntheticSpec};
    use alloc::string::String;

    #[test]
    fn one_step_on_a_quadratic() {
        // loss (w - 1)^2 / 2 at w = 0 has gradient -1
        let (mut w, mut g) = ([0.0], [-1.0]);
        let mut sgd = Sgd::new(0.9, 0.0);
        let mut p = [ParamMut { name: String::from("w"), value: &mut w, grad: &mut g }];
        sgd.step(&mut p, 0.1);
        assert_eq!(w[0], 0.1);
    }

    #[test]
    fn momentum_accumulates() {
        let (mut w, mut g) = ([0.0], [-1.0]);
        let mut sgd = Sgd::new(0.5, 0.0);
        for _ in 0..2 {
            let mut p = [ParamMut { name: String::from("w"), value: &mut w, grad: &mut g }];
            sgd.step(&mut p, 1.0);
        }
        assert_eq!(w[0], 2.5);
    }

    #[test]
    fn step_decay() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.01);
        assert_eq!(cfg.lr_at(14), 0.01);
        assert!((cfg.lr_at(15) - 0.001).abs() < 1e-18);
        assert!((cfg.lr_at(29) - 0.0001).abs() < 1e-18);
    }

    fn small() -> (Network, Dataset) {
        let spec = NetworkSpec::tiny(BlockKind::C2D, 4).in_channels(1).size(16, 16).frames(4);
        let data = gen_synthetic(&SyntheticSpec { size: 16, square: 4, step: 2, clip_len: 4, per_class: 2, ..Default::default() })
            .unwrap();
        (crate::blocks::make_network(&spec).unwrap(), data)
    }

    #[test]
    fn zero_lr_leaves_weights_alone() {
        let (mut net, data) = small();
        let before: Vec<Vec<f64>> = net.params().iter().map(|p| p.value.to_vec()).collect();
        let cfg = TrainConfig { lr: 0.0, epochs: 1, batch_size: 4, segments: 4, ..Default::default() };
        let h = train(&mut net, &data, None, &cfg, |_, _| {}).unwrap();
        let after: Vec<Vec<f64>> = net.params().iter().map(|p| p.value.to_vec()).collect();
        assert_eq!(before, after);
        assert_eq!(h.train_loss.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig { epochs: 2, batch_size: 3, segments: 4, ..Default::default() };
        let run = || {
            let (mut net, data) = small();
            let h = train(&mut net, &data, Some(&data), &cfg, |_, _| {}).unwrap();
            (net, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(ha.eval_accuracy.len(), 2);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let (mut net, data) = small();
        net.head.fc.bias[0] = f64::NAN;
        let cfg = TrainConfig { epochs: 1, segments: 4, ..Default::default() };
        assert!(matches!(train(&mut net, &data, None, &cfg, |_, _| {}), Err(Error::NonFinite(_))));
    }

    struct Constant(usize, usize);

    impl ClipClassifier for Constant {
        fn clip_logits(&self, input: &Tensor5) -> Result<Matrix> {
            let mut m = Matrix::zeros(input.shape().n, self.1);
            for r in 0..m.rows {
                m.row_mut(r)[self.0] = 1.0;
            }
            Ok(m)
        }
    }

    struct Oracle(Vec<usize>, core::cell::Cell<usize>);

    impl ClipClassifier for Oracle {
        fn clip_logits(&self, input: &Tensor5) -> Result<Matrix> {
            let mut m = Matrix::zeros(input.shape().n, 4);
            for r in 0..m.rows {
                let i = self.1.get();
                m.row_mut(r)[self.0[i]] = 1.0;
                self.1.set(i + 1);
            }
            Ok(m)
        }
    }

    #[test]
    fn oracle_scores_one() {
        let (_, data) = small();
        let labels = data.samples.iter().map(|s| s.label).collect();
        assert_eq!(evaluate(&Oracle(labels, Default::default()), &data, 4).unwrap().accuracy, 1.0);
    }

    #[test]
    fn milestones_must_increase() {
        assert!(TrainConfig { milestones: vec![10, 5], ..Default::default() }.validate().is_err());
    }

    #[test]
    fn constant_classifier_scores_one_class() {
        let (_, data) = small();
        let r = evaluate(&Constant(2, 4), &data, 4).unwrap();
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.per_class, vec![Some(0.0), Some(0.0), Some(1.0), Some(0.0)]);
    }
}
