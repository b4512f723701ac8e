//! Post-training diagnostics: BN scale magnitudes per path, per-frame
//! predictions and sensitivity to frame order.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::blocks::{Network, Op, PathTag};
use crate::error::{Error, Result};
use crate::ops::softmax;
use crate::tensor::Tensor5;

pub const HISTOGRAM_BINS: usize = 20;

/// Summary of `|gamma|` over one path's channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStats {
    pub abs_scale: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// Counts over the shared bins of the owning [`BnAttribution`].
    pub histogram: Vec<usize>,
}

/// `|gamma|` of the BN closing one parallel block, split by path.
#[derive(Debug, Clone, PartialEq)]
pub struct BnAttribution {
    pub layer: String,
    pub stage: Option<usize>,
    pub block: Option<usize>,
    /// `HISTOGRAM_BINS + 1` edges spanning `[0, max |gamma|]`.
    pub bin_edges: Vec<f64>,
    pub spatial: PathStats,
    pub temporal: PathStats,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn bin_of(v: f64, hi: f64, bins: usize) -> usize {
    ((v / hi * bins as f64) as usize).min(bins - 1)
}

fn path_stats(values: Vec<f64>, hi: f64) -> PathStats {
    let mut sorted = values.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut histogram = alloc::vec![0usize; HISTOGRAM_BINS];
    for &v in &values {
        histogram[bin_of(v, hi, HISTOGRAM_BINS)] += 1;
    }
    let mean = if values.is_empty() { f64::NAN } else { sorted.iter().sum::<f64>() / sorted.len() as f64 };
    PathStats { median: median(&sorted), mean, histogram, abs_scale: values }
}

/// One entry per BN whose channels carry spatial/temporal path tags.
pub fn extract_bn_attribution(net: &Network) -> Result<Vec<BnAttribution>> {
    let mut out = Vec::new();
    for node in &net.graph.nodes {
        let Op::Bn(bn) = &node.op else { continue };
        if node.meta.channel_groups.is_empty() {
            continue;
        }
        let (mut sp, mut tp) = (Vec::new(), Vec::new());
        for g in &node.meta.channel_groups {
            let dst = match g.tag {
                PathTag::Spatial => &mut sp,
                PathTag::Temporal => &mut tp,
                PathTag::Shared => continue,
            };
            dst.extend(bn.scale[g.start..g.end].iter().map(|x| x.abs()));
        }
        if sp.iter().chain(&tp).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("BN scale"));
        }
        let max = sp.iter().chain(&tp).copied().fold(0.0, f64::max);
        let hi = if max > 0.0 { max } else { 1.0 };
        let bin_edges = (0..=HISTOGRAM_BINS).map(|i| hi * i as f64 / HISTOGRAM_BINS as f64).collect();
        out.push(BnAttribution {
            layer: node.name.clone(),
            stage: node.meta.stage,
            block: node.meta.block,
            bin_edges,
            spatial: path_stats(sp, hi),
            temporal: path_stats(tp, hi),
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig(
            "network has no parallel spatial/temporal blocks to attribute".into(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    /// Per frame, the `k` most probable `(class, softmax score)` pairs, best first.
    pub frames: Vec<Vec<(usize, f64)>>,
    pub clip_logits: Vec<f64>,
    /// Softmax of the frame-averaged logits.
    pub clip_probabilities: Vec<f64>,
    pub prediction: usize,
}

fn top_k(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.truncate(k);
    idx
}

/// Eval-mode per-frame predictions of a single clip (`N = 1`).
pub fn per_frame_trace(net: &Network, clip: &Tensor5, k: usize) -> Result<FrameTrace> {
    if clip.shape().n != 1 {
        return Err(Error::InvalidConfig("frame trace expects a single clip".into()));
    }
    if k == 0 || k > net.num_classes() {
        return Err(Error::InvalidConfig(alloc::format!(
            "top-k of {k} outside 1..={}",
            net.num_classes()
        )));
    }
    net.check_input(clip)?;
    let out = net.predict(clip)?;
    let frames = (0..out.frames).map(|t| top_k(&softmax(out.frame_logits(0, t)), k)).collect();
    let clip_logits = out.logits.row(0).to_vec();
    Ok(FrameTrace {
        frames,
        clip_probabilities: softmax(&clip_logits),
        prediction: out.logits.argmax_row(0),
        clip_logits,
    })
}

/// Mean over `perms` of the per-class mean absolute change in clip logits
/// when frames are reordered by each permutation.
pub fn shuffle_sensitivity_with(net: &Network, clip: &Tensor5, perms: &[Vec<usize>]) -> Result<f64> {
    let t = clip.shape().t;
    if t < 2 {
        return Err(Error::InvalidConfig("shuffle sensitivity needs at least two frames".into()));
    }
    if perms.is_empty() {
        return Err(Error::InvalidConfig("no permutations given".into()));
    }
    let base = net.predict(clip)?.logits;
    let mut total = 0.0;
    for p in perms {
        let mut seen = alloc::vec![false; t];
        if p.len() != t || p.iter().any(|&i| i >= t || core::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidConfig("not a permutation of the clip's frames".into()));
        }
        let moved = net.predict(&clip.permute_frames(p)?)?.logits;
        let d: f64 = base.data.iter().zip(&moved.data).map(|(a, b)| (a - b).abs()).sum();
        total += d / base.data.len() as f64;
    }
    Ok(total / perms.len() as f64)
}

/// [`shuffle_sensitivity_with`] over `trials` uniformly random permutations.
pub fn shuffle_sensitivity<R: Rng + ?Sized>(net: &Network, clip: &Tensor5, trials: usize, rng: &mut R) -> Result<f64> {
    let t = clip.shape().t;
    let perms: Vec<Vec<usize>> = (0..trials)
        .map(|_| {
            let mut p: Vec<usize> = (0..t).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    shuffle_sensitivity_with(net, clip, &perms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{make_network, BlockKind, NetworkSpec};
    use crate::ratio::Ratio;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(kind: BlockKind) -> Network {
        make_network(&NetworkSpec::tiny(kind, 4).in_channels(1).size(16, 16).frames(4)).unwrap()
    }

    fn clip(seed: u64) -> Tensor5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor5::from_fn([1, 1, 4, 16, 16], |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn attribution_of_known_scales() {
        let mut n = net(BlockKind::GST(Ratio::QUARTER));
        let id = n.graph.nodes.iter().position(|x| !x.meta.channel_groups.is_empty()).unwrap();
        let groups = n.graph.nodes[id].meta.channel_groups.clone();
        let bn = n.graph.bn_mut(id).unwrap();
        for g in &groups {
            for c in g.start..g.end {
                bn.scale[c] = if g.tag == PathTag::Spatial { -1.0 } else { 0.25 };
            }
        }
        let a = &extract_bn_attribution(&n).unwrap()[0];
        assert_eq!(a.spatial.mean, 1.0);
        assert_eq!(a.temporal.median, 0.25);
        assert_eq!(a.bin_edges[HISTOGRAM_BINS], 1.0);
        assert_eq!(a.spatial.histogram[HISTOGRAM_BINS - 1], a.spatial.abs_scale.len());
        assert_eq!(a.temporal.histogram[5], a.temporal.abs_scale.len());
        assert_eq!(a.spatial.abs_scale.len() + a.temporal.abs_scale.len(), groups.last().unwrap().end);
    }

    #[test]
    fn attribution_needs_parallel_blocks() {
        assert!(extract_bn_attribution(&net(BlockKind::C2D)).is_err());
        assert!(extract_bn_attribution(&net(BlockKind::GSTLarge(Ratio::HALF))).is_ok());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[1.0, 2.0, 4.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 4.0, 8.0]), 3.0);
    }

    #[test]
    fn identity_permutation_is_zero() {
        for kind in [BlockKind::C2D, BlockKind::GST(Ratio::QUARTER), BlockKind::C3D] {
            let s = shuffle_sensitivity_with(&net(kind), &clip(1), &[vec![0, 1, 2, 3]]).unwrap();
            assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn c2d_ignores_order_gst_does_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(shuffle_sensitivity(&net(BlockKind::C2D), &clip(2), 5, &mut rng).unwrap(), 0.0);
        assert!(shuffle_sensitivity(&net(BlockKind::GST(Ratio::QUARTER)), &clip(2), 5, &mut rng).unwrap() > 0.0);
    }

    #[test]
    fn shuffle_errors() {
        let n = net(BlockKind::C2D);
        let one = Tensor5::zeros([1, 1, 1, 16, 16]).unwrap();
        assert!(shuffle_sensitivity_with(&n, &one, &[vec![0]]).is_err());
        assert!(shuffle_sensitivity_with(&n, &clip(0), &[vec![0, 0, 1, 2]]).is_err());
    }

    #[test]
    fn trace_shape() {
        let n = net(BlockKind::GST(Ratio::QUARTER));
        let tr = per_frame_trace(&n, &clip(4), 2).unwrap();
        assert_eq!(tr.frames.len(), 4);
        assert!(tr.frames.iter().all(|f| f.len() == 2 && f[0].1 >= f[1].1 && f[0].1 <= 1.0 && f[1].1 >= 0.0));
        assert!((tr.clip_probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let full = per_frame_trace(&n, &clip(4), 4).unwrap();
        for f in &full.frames {
            assert!((f.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(per_frame_trace(&n, &clip(4), 5).is_err());
    }

    #[test]
    fn constant_clip_gives_identical_frames() {
        let c = Tensor5::full([1, 1, 4, 16, 16], 0.3).unwrap();
        let tr = per_frame_trace(&net(BlockKind::C2D), &c, 4).unwrap();
        assert!(tr.frames.windows(2).all(|w| w[0] == w[1]));
        // temporal zero padding makes the end frames differ
        let tr = per_frame_trace(&net(BlockKind::GST(Ratio::QUARTER)), &c, 4).unwrap();
        assert_ne!(tr.frames[0], tr.frames[1]);
    }
}
