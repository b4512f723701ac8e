//! Synthetic moving-square clips for probing temporal reasoning.
//!
//! Moving squares travel along a middle band, static ones sit in the top or
//! bottom band, so the static classes are separable from any single frame
//! while the two horizontal directions are not. A clip of an
//! order-contrastive class is the exact frame reversal (noise included) of
//! the partner class's clip with the same index.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Motion {
    LeftToRight,
    RightToLeft,
    StaticTop,
    StaticBottom,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::LeftToRight, Motion::RightToLeft, Motion::StaticTop, Motion::StaticBottom];

    pub fn name(&self) -> &'static str {
        match self {
            Motion::LeftToRight => "left-to-right",
            Motion::RightToLeft => "right-to-left",
            Motion::StaticTop => "static-top",
            Motion::StaticBottom => "static-bottom",
        }
    }

    /// The class whose clips are this class's clips played backwards.
    pub fn reversal(&self) -> Option<Motion> {
        match self {
            Motion::LeftToRight => Some(Motion::RightToLeft),
            Motion::RightToLeft => Some(Motion::LeftToRight),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Square frame side in pixels.
    pub size: usize,
    /// Frames per generated clip, before segment sampling.
    pub clip_len: usize,
    pub classes: Vec<Motion>,
    pub per_class: usize,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
    pub square: usize,
    /// Horizontal displacement per frame of the moving classes.
    pub step: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            size: 32,
            clip_len: 8,
            classes: Motion::ALL.to_vec(),
            per_class: 48,
            noise: 0.1,
            square: 6,
            step: 3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.classes.is_empty() || self.per_class == 0 || self.clip_len == 0 {
            return bad("need at least one class, one clip per class and one frame");
        }
        let has_pair = self
            .classes
            .iter()
            .any(|c| c.reversal().is_some_and(|r| self.classes.contains(&r)));
        if !has_pair {
            return bad("classes must include an order-contrastive pair");
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return bad("duplicate class");
            }
        }
        if self.square == 0 || 2 * self.square + 2 > self.size {
            return bad("square does not fit in the frame bands");
        }
        if self.square + self.step * (self.clip_len - 1) > self.size {
            return bad("moving square leaves the frame");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("noise must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `1 x 1 x T x H x W`
    pub clip: Tensor5,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<Motion>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Samples whose class is one of `keep`, labels unchanged.
    pub fn filter(&self, keep: &[Motion]) -> Dataset {
        let samples = self
            .samples
            .iter()
            .filter(|s| keep.contains(&self.classes[s.label]))
            .cloned()
            .collect();
        Dataset { classes: self.classes.clone(), samples }
    }
}

// Background sits below zero so that zero padding reads as a frame edge.
const BACKGROUND: f64 = -0.5;
const FOREGROUND: f64 = 0.5;

fn render(spec: &SyntheticSpec, positions: &[(usize, usize)], rng: &mut ChaCha8Rng) -> Result<Tensor5> {
    let (t_n, s, q) = (spec.clip_len, spec.size, spec.square);
    let mut clip = Tensor5::full([1, 1, t_n, s, s], BACKGROUND)?;
    let frame = s * s;
    let data = clip.data_mut();
    for (t, &(y, x)) in positions.iter().enumerate() {
        for h in y..y + q {
            data[t * frame + h * s + x..t * frame + h * s + x + q].fill(FOREGROUND);
        }
    }
    if spec.noise > 0.0 {
        for v in data.iter_mut() {
            *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(clip)
}

fn reversed(clip: &Tensor5) -> Result<Tensor5> {
    let t = clip.shape().t;
    let perm: Vec<usize> = (0..t).rev().collect();
    clip.permute_frames(&perm)
}

/// Deterministic dataset: samples are ordered class by class.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (s, q, t_n) = (spec.size, spec.square, spec.clip_len);
    let band = s / 2 - q / 2;
    let travel = spec.step * (t_n - 1);
    let mut by_class: Vec<Vec<Tensor5>> = Vec::with_capacity(spec.classes.len());
    for (ci, &motion) in spec.classes.iter().enumerate() {
        let partner = motion.reversal().and_then(|r| spec.classes[..ci].iter().position(|&c| c == r));
        let clips = match partner {
            Some(p) => by_class[p].iter().map(reversed).collect::<Result<Vec<_>>>()?,
            None => (0..spec.per_class)
                .map(|_| {
                    let positions: Vec<(usize, usize)> = match motion {
                        Motion::LeftToRight | Motion::RightToLeft => {
                            let y = band - 2 + rng.random_range(0..=4);
                            let x0 = rng.random_range(0..=s - q - travel);
                            (0..t_n)
                                .map(|t| {
                                    let k = if motion == Motion::LeftToRight { t } else { t_n - 1 - t };
                                    (y, x0 + spec.step * k)
                                })
                                .collect()
                        }
                        Motion::StaticTop | Motion::StaticBottom => {
                            let jitter = rng.random_range(0..=(band - 2) / 4);
                            let y = if motion == Motion::StaticTop { jitter } else { s - q - jitter };
                            let x = rng.random_range(0..=s - q);
                            alloc::vec![(y, x); t_n]
                        }
                    };
                    render(spec, &positions, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        by_class.push(clips);
    }
    let samples = by_class
        .into_iter()
        .enumerate()
        .flat_map(|(label, clips)| clips.into_iter().map(move |clip| Sample { clip, label }))
        .collect();
    Ok(Dataset { classes: spec.classes.clone(), samples })
}
