//! Ready-made checks over every layer kind, one standalone block and an
//! assembled network.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_network, finite_diff_check, FnProbe, GradCheckConfig, GradCheckReport, GradProbe};
use crate::blocks::{make_block, make_network, BlockSpec, Graph, NetworkSpec};
use crate::error::Result;
use crate::ops::{
    bn_forward, bn_backward, conv_backward, conv_forward, global_avg_pool_spatial,
    global_avg_pool_spatial_backward, max_pool_spatial, max_pool_spatial_backward, relu,
    relu_backward, softmax_cross_entropy, BnLayer, ConvLayer, ConvSpec, Linear, Matrix, MaxPoolSpec,
    Mode,
};
use crate::tensor::{Shape5, Tensor5};

fn random_tensor(shape: impl Into<Shape5>, rng: &mut ChaCha8Rng) -> Result<Tensor5> {
    Tensor5::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor5, b: &Tensor5) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn prefixed(prefix: &str, mut reports: Vec<GradCheckReport>) -> Vec<GradCheckReport> {
    for r in &mut reports {
        r.name = format!("{prefix}/{}", r.name);
    }
    reports
}

fn conv_case(name: &str, spec: ConvSpec, in_shape: [usize; 5], rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut layer = ConvLayer::init(spec, rng)?;
    if let Some(b) = &mut layer.bias {
        b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let x = random_tensor(in_shape, rng)?;
    let proj = random_tensor(spec.output_shape(x.shape())?, rng)?;
    let g = conv_backward(&x, &layer, &proj)?;
    let mut names: Vec<String> = vec!["input".into(), "weight".into()];
    let mut params = vec![x.data().to_vec(), layer.weight.data().to_vec()];
    let mut analytic = vec![g.input.into_vec(), g.weight.into_vec()];
    if let (Some(b), Some(gb)) = (&layer.bias, g.bias) {
        names.push("bias".into());
        params.push(b.clone());
        analytic.push(gb);
    }
    let xs = x.shape();
    let mut probe = FnProbe {
        names,
        params,
        objective: |p: &[Vec<f64>]| {
            let mut l = ConvLayer::with_weights(spec, p[1].clone())?;
            if spec.bias {
                l.bias = Some(p[2].clone());
            }
            Ok(dot(&conv_forward(&Tensor5::from_vec(xs, p[0].clone())?, &l)?, &proj))
        },
    };
    let blocks: Vec<usize> = (0..analytic.len()).collect();
    Ok(prefixed(name, finite_diff_check(&mut probe, &blocks, &analytic, cfg)?))
}

fn bn_case(mode: Mode, rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let x = random_tensor([2, 3, 2, 3, 3], rng)?;
    let mut bn = BnLayer::new(3);
    for c in 0..3 {
        bn.scale[c] = rng.random_range(0.5..1.5);
        bn.shift[c] = rng.random_range(-0.5..0.5);
        bn.running_mean[c] = rng.random_range(-0.5..0.5);
        bn.running_var[c] = rng.random_range(0.5..1.5);
    }
    let proj = random_tensor(x.shape(), rng)?;
    let (_, cache) = bn_forward(&x, &mut bn.clone(), mode)?;
    let gi = bn_backward(&cache, &mut bn, &proj)?;
    let template = bn.clone();
    let xs = x.shape();
    let mut probe = FnProbe {
        names: vec!["input".into(), "scale".into(), "shift".into()],
        params: vec![x.data().to_vec(), template.scale.clone(), template.shift.clone()],
        objective: |p: &[Vec<f64>]| {
            let mut l = template.clone();
            l.scale = p[1].clone();
            l.shift = p[2].clone();
            Ok(dot(&bn_forward(&Tensor5::from_vec(xs, p[0].clone())?, &mut l, mode)?.0, &proj))
        },
    };
    let analytic = vec![gi.into_vec(), bn.grad_scale.clone(), bn.grad_shift.clone()];
    let name = if mode == Mode::Train { "bn.train" } else { "bn.eval" };
    Ok(prefixed(name, finite_diff_check(&mut probe, &[0, 1, 2], &analytic, cfg)?))
}

fn elementwise_cases(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let x = random_tensor([1, 2, 2, 5, 5], rng)?;
    let xs = x.shape();
    let (pooled, am) = max_pool_spatial(&x, MaxPoolSpec::STEM)?;
    let p_max = random_tensor(pooled.shape(), rng)?;
    let p_relu = random_tensor(xs, rng)?;
    let avg_shape = global_avg_pool_spatial(&x)?.shape();
    let p_avg = random_tensor(avg_shape, rng)?;
    let logits = Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect())?;
    let labels = [2usize, 0, 3];
    let mut lin = Linear::zeros(5, 3);
    lin.weight.iter_mut().chain(lin.bias.iter_mut()).for_each(|w| *w = rng.random_range(-1.0..1.0));
    let lx = Matrix::from_vec(2, 5, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let p_lin = Matrix::from_vec(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    let analytic = vec![
        max_pool_spatial_backward(xs, &am, &p_max)?.into_vec(),
        relu_backward(&x, &p_relu)?.into_vec(),
        global_avg_pool_spatial_backward(xs, &p_avg)?.into_vec(),
        softmax_cross_entropy(&logits, &labels)?.1.data,
        lin.backward(&lx, &p_lin)?.data,
        lin.grad_weight.clone(),
        lin.grad_bias.clone(),
    ];
    let template = lin.clone();
    let mut probe = FnProbe {
        names: vec![
            "maxpool/input".into(),
            "relu/input".into(),
            "avgpool/input".into(),
            "softmax_ce/logits".into(),
            "linear/input".into(),
            "linear/weight".into(),
            "linear/bias".into(),
        ],
        params: vec![
            x.data().to_vec(),
            x.data().to_vec(),
            x.data().to_vec(),
            logits.data.clone(),
            lx.data.clone(),
            lin.weight.clone(),
            lin.bias.clone(),
        ],
        objective: |p: &[Vec<f64>]| {
            let a = max_pool_spatial(&Tensor5::from_vec(xs, p[0].clone())?, MaxPoolSpec::STEM)?.0;
            let b = relu(&Tensor5::from_vec(xs, p[1].clone())?);
            let c = global_avg_pool_spatial(&Tensor5::from_vec(xs, p[2].clone())?)?;
            let (l, _) = softmax_cross_entropy(&Matrix::from_vec(3, 4, p[3].clone())?, &labels)?;
            let mut fc = template.clone();
            fc.weight = p[5].clone();
            fc.bias = p[6].clone();
            let y = fc.forward(&Matrix::from_vec(2, 5, p[4].clone())?)?;
            let lin_term: f64 = y.data.iter().zip(&p_lin.data).map(|(a, b)| a * b).sum();
            Ok(dot(&a, &p_max) + dot(&b, &p_relu) + dot(&c, &p_avg) + l + lin_term)
        },
    };
    finite_diff_check(&mut probe, &[0, 1, 2, 3, 4, 5, 6], &analytic, cfg)
}

/// Every primitive layer: dense, strided and grouped convolution, BN in both
/// modes, ReLU, max and average pooling, the classifier and the loss.
pub fn check_layers(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = conv_case("conv.dense", ConvSpec::new(2, 3, [3, 3, 3]).padding([1, 1, 1]), [1, 2, 3, 4, 4], &mut rng, cfg)?;
    out.extend(conv_case(
        "conv.grouped",
        ConvSpec::new(4, 6, [3, 3, 3]).padding([1, 1, 1]).stride([1, 2, 2]).groups(2).with_bias(true),
        [2, 4, 3, 5, 5],
        &mut rng,
        cfg,
    )?);
    out.extend(conv_case("conv.temporal", ConvSpec::new(3, 2, [3, 1, 1]).padding([1, 0, 0]), [1, 3, 4, 3, 3], &mut rng, cfg)?);
    out.extend(conv_case("conv.pointwise", ConvSpec::new(3, 4, [1, 1, 1]).stride([1, 2, 2]), [1, 3, 2, 5, 5], &mut rng, cfg)?);
    out.extend(bn_case(Mode::Train, &mut rng, cfg)?);
    out.extend(bn_case(Mode::Eval, &mut rng, cfg)?);
    out.extend(elementwise_cases(&mut rng, cfg)?);
    Ok(out)
}

struct GraphProbe<'a> {
    graph: &'a mut Graph,
    input: &'a Tensor5,
    proj: &'a Tensor5,
}

impl GradProbe for GraphProbe<'_> {
    fn block_names(&self) -> Vec<String> {
        self.graph.params().into_iter().map(|p| p.name).collect()
    }

    fn block_len(&self, block: usize) -> usize {
        self.graph.params()[block].value.len()
    }

    fn get(&self, block: usize, index: usize) -> f64 {
        self.graph.params()[block].value[index]
    }

    fn set(&mut self, block: usize, index: usize, value: f64) {
        self.graph.params_mut()[block].value[index] = value;
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(dot(self.graph.forward(self.input, Mode::Train)?.output(), self.proj))
    }
}

/// One block of the given kind with its closing BN, all parameters and the input.
pub fn check_block(spec: BlockSpec, seed: u64, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let (c_in, c_out) = (8, 8);
    let mut graph = make_block(spec, c_in, c_out, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x626c_6f63);
    let x = random_tensor([2, c_in, 4, 5, 5], &mut rng)?;
    let tape = graph.forward(&x, Mode::Train)?;
    let proj = random_tensor(tape.output().shape(), &mut rng)?;
    graph.zero_grad();
    let g_in = graph.backward(&tape, proj.clone())?;
    let analytic: Vec<Vec<f64>> = graph.params().iter().map(|p| p.grad.to_vec()).collect();
    let blocks: Vec<usize> = (0..analytic.len()).collect();
    let mut probe = GraphProbe { graph: &mut graph, input: &x, proj: &proj };
    let name = format!("block.{}", spec.kind.name());
    let mut out = prefixed(&name, finite_diff_check(&mut probe, &blocks, &analytic, cfg)?);

    let xs = x.shape();
    let frozen = make_block(spec, c_in, c_out, seed)?;
    let mut input_probe = FnProbe {
        names: vec!["input".into()],
        params: vec![x.data().to_vec()],
        objective: |p: &[Vec<f64>]| Ok(dot(frozen.forward(&Tensor5::from_vec(xs, p[0].clone())?, Mode::Train)?.output(), &proj)),
    };
    out.extend(prefixed(&name, finite_diff_check(&mut input_probe, &[0], &[g_in.into_vec()], cfg)?));
    Ok(out)
}

/// Layer checks, one standalone block of `block`, and `network_blocks`
/// randomly chosen parameter blocks of a two-stage width-16 network built
/// from `block` on a `1 x 16 x 4 x 8 x 8` clip.
pub fn run_suite(block: BlockSpec, seed: u64, network_blocks: usize, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = check_layers(seed, cfg)?;
    out.extend(check_block(block, seed, cfg)?);
    let spec = NetworkSpec::tiny(block, 3).in_channels(16).frames(4).size(8, 8).seed(seed);
    let mut net = make_network(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e65_7477);
    let x = random_tensor(spec.input_shape(1), &mut rng)?;
    let label = rng.random_range(0..3);
    let total = net.params().len();
    let mut picked = sample(&mut rng, total, network_blocks.min(total)).into_vec();
    picked.sort_unstable();
    let net_cfg = GradCheckConfig { max_entries: cfg.max_entries.or(Some(64)), ..*cfg };
    out.extend(prefixed("network", check_network(&mut net, &x, &[label], &picked, &net_cfg)?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockKind;
    use crate::ratio::Ratio;

    #[test]
    fn layer_suite_passes() {
        let r = check_layers(0, &GradCheckConfig::default()).unwrap();
        assert!(r.len() >= 15);
        for x in &r {
            assert!(x.passed, "{}: {}", x.name, x.max_rel_error);
        }
    }

    #[test]
    fn blocks_pass() {
        for kind in [BlockKind::P3D, BlockKind::GST(Ratio::QUARTER), BlockKind::C3DGroup(2)] {
            for x in check_block(BlockSpec::new(kind), 3, &GradCheckConfig::default()).unwrap() {
                assert!(x.passed, "{}: {}", x.name, x.max_rel_error);
            }
        }
    }
}
