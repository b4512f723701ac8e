//! Kernel properties checked against a direct-loop reference convolution and
//! central finite differences.

use gstnet_core::gradcheck::{finite_diff_check, FnProbe, GradCheckConfig};
use gstnet_core::ops::*;
use gstnet_core::{Shape5, Tensor5};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense (ungrouped) cross-correlation written as the textbook seven-deep loop.
fn dense_reference(x: &Tensor5, w: &Tensor5, stride: [usize; 3], pad: [usize; 3]) -> Tensor5 {
    let s = x.shape();
    let ws = w.shape();
    let (co, ci, kt, kh, kw) = (ws.n, ws.c, ws.t, ws.h, ws.w);
    assert_eq!(ci, s.c);
    let o = |x: usize, p: usize, k: usize, st: usize| (x + 2 * p - k) / st + 1;
    let (ot, oh, ow) = (o(s.t, pad[0], kt, stride[0]), o(s.h, pad[1], kh, stride[1]), o(s.w, pad[2], kw, stride[2]));
    let mut y = Tensor5::zeros([s.n, co, ot, oh, ow]).unwrap();
    for n in 0..s.n {
        for oc in 0..co {
            for a in 0..ot {
                for b in 0..oh {
                    for c in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..ci {
                            for i in 0..kt {
                                for j in 0..kh {
                                    for k in 0..kw {
                                        let t = (a * stride[0] + i) as isize - pad[0] as isize;
                                        let h = (b * stride[1] + j) as isize - pad[1] as isize;
                                        let ww = (c * stride[2] + k) as isize - pad[2] as isize;
                                        if t < 0 || h < 0 || ww < 0 || t >= s.t as isize || h >= s.h as isize || ww >= s.w as isize {
                                            continue;
                                        }
                                        acc += w.get(oc, ic, i, j, k) * x.get(n, ic, t as usize, h as usize, ww as usize);
                                    }
                                }
                            }
                        }
                        y.set(n, oc, a, b, c, acc);
                    }
                }
            }
        }
    }
    y
}

/// Grouped convolution as `g` independent dense convolutions on channel slices.
fn grouped_reference(x: &Tensor5, layer: &ConvLayer) -> Tensor5 {
    let spec = layer.spec;
    let (cig, cog) = (spec.in_per_group(), spec.out_per_group());
    let parts: Vec<Tensor5> = (0..spec.groups)
        .map(|g| {
            let xs = x.slice_channels(g * cig, (g + 1) * cig).unwrap();
            let ws = layer.weight.slice_channels(0, cig).unwrap();
            // weight groups live along the output-channel (batch) axis
            let wshape = ws.shape();
            let per = wshape.c * wshape.volume();
            let data = layer.weight.data()[g * cog * per..(g + 1) * cog * per].to_vec();
            let wg = Tensor5::from_vec(Shape5 { n: cog, ..wshape }, data).unwrap();
            dense_reference(&xs, &wg, spec.stride, spec.padding)
        })
        .collect();
    let refs: Vec<&Tensor5> = parts.iter().collect();
    Tensor5::concat_channels(&refs).unwrap()
}

fn random_tensor(shape: impl Into<Shape5>, rng: &mut ChaCha8Rng) -> Tensor5 {
    Tensor5::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

#[test]
fn two_groups_match_two_dense_convs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor([2, 4, 4, 8, 8], &mut rng);
    let spec = ConvSpec::new(4, 6, [3, 3, 3]).padding([1, 1, 1]).groups(2);
    let layer = ConvLayer::init(spec, &mut rng).unwrap();
    let y = conv_forward(&x, &layer).unwrap();
    let r = grouped_reference(&x, &layer);
    assert!(y.max_abs_diff(&r) <= 1e-12, "{}", y.max_abs_diff(&r));
}

#[derive(Debug, Clone)]
struct Case {
    n: usize,
    groups: usize,
    cig: usize,
    cog: usize,
    ext: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    seed: u64,
}

fn case() -> impl Strategy<Value = Case> {
    (
        1usize..3,
        1usize..4,
        1usize..4,
        1usize..4,
        prop::array::uniform3(1usize..4),
        prop::array::uniform3(1usize..3),
        prop::array::uniform3(0usize..2),
        any::<u64>(),
    )
        .prop_map(|(n, groups, cig, cog, kernel, stride, padding, seed)| {
            // extents large enough for the kernel after padding
            let ext = [kernel[0] + 2, kernel[1] + 3, kernel[2] + 2];
            Case { n, groups, cig, cog, ext, kernel: kernel.map(|k| 2 * k - 1), stride, padding, seed }
        })
}

impl Case {
    fn build(&self) -> (Tensor5, ConvLayer, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let spec = ConvSpec::new(self.groups * self.cig, self.groups * self.cog, self.kernel)
            .stride(self.stride)
            .padding(self.padding)
            .groups(self.groups);
        let layer = ConvLayer::init(spec, &mut rng).unwrap();
        let x = random_tensor([self.n, spec.in_channels, self.ext[0], self.ext[1], self.ext[2]], &mut rng);
        (x, layer, rng)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn grouped_equals_concatenated_dense(c in case()) {
        let (x, layer, _) = c.build();
        let y = conv_forward(&x, &layer).unwrap();
        let r = grouped_reference(&x, &layer);
        prop_assert!(y.max_abs_diff(&r) <= 1e-12);
    }

    #[test]
    fn linear_in_input(c in case(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (x, layer, mut rng) = c.build();
        let x2 = random_tensor(x.shape(), &mut rng);
        let mut mix = x.clone();
        mix.map_inplace(|v| a * v);
        mix.axpy(b, &x2).unwrap();
        let lhs = conv_forward(&mix, &layer).unwrap();
        let mut rhs = conv_forward(&x, &layer).unwrap();
        rhs.map_inplace(|v| a * v);
        rhs.axpy(b, &conv_forward(&x2, &layer).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
    }
}

#[test]
fn single_group_is_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor([1, 3, 3, 6, 5], &mut rng);
    let spec = ConvSpec::new(3, 4, [3, 3, 1]).stride([1, 2, 1]).padding([1, 0, 0]);
    let layer = ConvLayer::init(spec, &mut rng).unwrap();
    let y = conv_forward(&x, &layer).unwrap();
    let r = dense_reference(&x, &layer.weight, spec.stride, spec.padding);
    assert!(y.max_abs_diff(&r) <= 1e-15);
}

#[test]
fn spatial_only_conv_commutes_with_frame_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor([2, 4, 6, 7, 7], &mut rng);
    let spec = ConvSpec::spatial(4, 6, 3).stride([1, 2, 2]).groups(2);
    let layer = ConvLayer::init(spec, &mut rng).unwrap();
    let perm = [4, 0, 5, 2, 1, 3];
    let a = conv_forward(&x.permute_frames(&perm).unwrap(), &layer).unwrap();
    let b = conv_forward(&x, &layer).unwrap().permute_frames(&perm).unwrap();
    assert_eq!(a, b);
}

/// Weighted sum of a kernel's output with fixed random coefficients.
fn projection(shape: Shape5, seed: u64) -> Tensor5 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_tensor(shape, &mut rng)
}

fn dot(a: &Tensor5, b: &Tensor5) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn check_conv(spec: ConvSpec, in_shape: [usize; 5], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = ConvLayer::init(spec, &mut rng).unwrap();
    if let Some(b) = &mut layer.bias {
        b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let x = random_tensor(in_shape, &mut rng);
    let out_shape = spec.output_shape(x.shape()).unwrap();
    let proj = projection(out_shape, seed + 1);
    let g = conv_backward(&x, &layer, &proj).unwrap();

    let mut names = vec!["input".to_string(), "weight".to_string()];
    let mut params = vec![x.data().to_vec(), layer.weight.data().to_vec()];
    let mut analytic = vec![g.input.data().to_vec(), g.weight.data().to_vec()];
    if let (Some(b), Some(gb)) = (&layer.bias, &g.bias) {
        names.push("bias".into());
        params.push(b.clone());
        analytic.push(gb.clone());
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
            let y = conv_forward(&Tensor5::from_vec(xs, p[0].clone())?, &l)?;
            Ok(dot(&y, &proj))
        },
    };
    let blocks: Vec<usize> = (0..analytic.len()).collect();
    let reports = finite_diff_check(&mut probe, &blocks, &analytic, &GradCheckConfig::default()).unwrap();
    for r in reports {
        assert!(r.passed, "{spec:?} {}: rel {}", r.name, r.max_rel_error);
    }
}

#[test]
fn conv_gradients_small_dense() {
    check_conv(ConvSpec::new(2, 2, [2, 2, 2]), [1, 2, 2, 5, 5], 1);
}

#[test]
fn conv_gradients_strided_padded_grouped() {
    check_conv(ConvSpec::new(4, 6, [3, 3, 3]).padding([1, 1, 1]).stride([1, 2, 2]).groups(2).with_bias(true), [2, 4, 3, 6, 5], 2);
    check_conv(ConvSpec::new(3, 3, [3, 1, 1]).padding([1, 0, 0]).stride([2, 1, 1]).groups(3), [1, 3, 5, 3, 3], 3);
    check_conv(ConvSpec::new(2, 4, [1, 1, 1]).stride([1, 2, 2]), [1, 2, 2, 5, 5], 4);
    check_conv(ConvSpec::new(2, 2, [1, 1, 1]), [1, 2, 2, 3, 3], 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn conv_gradients_random_shapes(c in case()) {
        let spec = ConvSpec::new(c.groups * c.cig, c.groups * c.cog, c.kernel)
            .stride(c.stride)
            .padding(c.padding)
            .groups(c.groups)
            .with_bias(c.seed % 2 == 0);
        check_conv(spec, [c.n, spec.in_channels, c.ext[0], c.ext[1], c.ext[2]], c.seed);
    }
}

#[test]
fn bn_gradients_train_and_eval() {
    for mode in [Mode::Train, Mode::Eval] {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_tensor([2, 3, 2, 3, 3], &mut rng);
        let mut bn = BnLayer::new(3);
        bn.scale = vec![0.5, 1.5, -0.7];
        bn.shift = vec![0.1, -0.2, 0.3];
        bn.running_mean = vec![0.2, -0.1, 0.0];
        bn.running_var = vec![0.8, 1.3, 0.5];
        let proj = projection(x.shape(), 22);
        let (_, cache) = bn_forward(&x, &mut bn.clone(), mode).unwrap();
        let gi = bn_backward(&cache, &mut bn, &proj).unwrap();
        let template = bn.clone();
        let xs = x.shape();
        let mut probe = FnProbe {
            names: vec!["input".into(), "scale".into(), "shift".into()],
            params: vec![x.data().to_vec(), template.scale.clone(), template.shift.clone()],
            objective: |p: &[Vec<f64>]| {
                let mut l = template.clone();
                l.scale = p[1].clone();
                l.shift = p[2].clone();
                let (y, _) = bn_forward(&Tensor5::from_vec(xs, p[0].clone())?, &mut l, mode)?;
                Ok(dot(&y, &proj))
            },
        };
        let analytic = vec![gi.data().to_vec(), bn.grad_scale.clone(), bn.grad_shift.clone()];
        let reports = finite_diff_check(&mut probe, &[0, 1, 2], &analytic, &GradCheckConfig::default()).unwrap();
        for r in reports {
            assert!(r.passed, "{mode:?} {}: {}", r.name, r.max_rel_error);
        }
    }
}

#[test]
fn pooling_relu_and_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = random_tensor([1, 2, 2, 5, 5], &mut rng);
    let xs = x.shape();
    let (pooled, am) = max_pool_spatial(&x, MaxPoolSpec::STEM).unwrap();
    let proj = projection(pooled.shape(), 32);
    let g_max = max_pool_spatial_backward(xs, &am, &proj).unwrap();
    let g_relu = relu_backward(&x, &projection(xs, 33)).unwrap();
    let avg_shape = global_avg_pool_spatial(&x).unwrap().shape();
    let g_avg = global_avg_pool_spatial_backward(xs, &projection(avg_shape, 34)).unwrap();

    let logits = Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let labels = [2usize, 0, 3];
    let (_, g_ce) = softmax_cross_entropy(&logits, &labels).unwrap();

    let mut probe = FnProbe {
        names: vec!["maxpool".into(), "relu".into(), "avgpool".into(), "logits".into()],
        params: vec![x.data().to_vec(), x.data().to_vec(), x.data().to_vec(), logits.data.clone()],
        objective: |p: &[Vec<f64>]| {
            let a = max_pool_spatial(&Tensor5::from_vec(xs, p[0].clone())?, MaxPoolSpec::STEM)?.0;
            let b = relu(&Tensor5::from_vec(xs, p[1].clone())?);
            let c = global_avg_pool_spatial(&Tensor5::from_vec(xs, p[2].clone())?)?;
            let (l, _) = softmax_cross_entropy(&Matrix::from_vec(3, 4, p[3].clone())?, &labels)?;
            Ok(dot(&a, &proj) + dot(&b, &projection(xs, 33)) + dot(&c, &projection(avg_shape, 34)) + l)
        },
    };
    let analytic = vec![g_max.into_vec(), g_relu.into_vec(), g_avg.into_vec(), g_ce.data];
    let reports = finite_diff_check(&mut probe, &[0, 1, 2, 3], &analytic, &GradCheckConfig::default()).unwrap();
    for r in reports {
        assert!(r.passed, "{}: {}", r.name, r.max_rel_error);
    }
}

#[test]
fn linear_layer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut lin = Linear::zeros(5, 3);
    lin.weight.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    lin.bias.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    let x = Matrix::from_vec(2, 5, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let proj: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gx = lin.backward(&x, &Matrix::from_vec(2, 3, proj.clone()).unwrap()).unwrap();
    let template = lin.clone();
    let mut probe = FnProbe {
        names: vec!["x".into(), "weight".into(), "bias".into()],
        params: vec![x.data.clone(), lin.weight.clone(), lin.bias.clone()],
        objective: |p: &[Vec<f64>]| {
            let mut l = template.clone();
            l.weight = p[1].clone();
            l.bias = p[2].clone();
            let y = l.forward(&Matrix::from_vec(2, 5, p[0].clone())?)?;
            Ok(y.data.iter().zip(&proj).map(|(a, b)| a * b).sum())
        },
    };
    let analytic = vec![gx.data, lin.grad_weight.clone(), lin.grad_bias.clone()];
    let reports = finite_diff_check(&mut probe, &[0, 1, 2], &analytic, &GradCheckConfig::default()).unwrap();
    assert!(reports.iter().all(|r| r.passed));
}
