//! Block constructors and ResNet assembly.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::config::{BlockKind, BlockSpec, GstConfig};
use crate::blocks::graph::{ChannelGroup, Graph, Node, NodeId, NodeMeta, Op, PathTag, Unit};
use crate::error::{Error, Result};
use crate::ops::{BnLayer, ConvLayer, ConvSpec, MaxPoolSpec};

/// Appends nodes to a [`Graph`], initialising weights from a seeded stream.
pub struct GraphBuilder {
    graph: Graph,
    rng: ChaCha8Rng,
    stage: Option<usize>,
    block: Option<usize>,
}

impl GraphBuilder {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        let mut b = Self { graph: Graph::default(), rng: ChaCha8Rng::seed_from_u64(seed), stage: None, block: None };
        b.push("input", Op::Input { channels: in_channels }, vec![], PathTag::Shared);
        b
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn set_position(&mut self, stage: Option<usize>, block: Option<usize>) {
        self.stage = stage;
        self.block = block;
    }

    pub fn finish(self) -> Graph {
        self.graph
    }

    fn push(&mut self, name: &str, op: Op, inputs: Vec<NodeId>, path: PathTag) -> NodeId {
        let meta = NodeMeta { stage: self.stage, block: self.block, path, ..NodeMeta::default() };
        self.graph.nodes.push(Node { name: name.into(), op, inputs, meta });
        self.graph.nodes.len() - 1
    }

    pub fn conv(&mut self, name: &str, input: NodeId, spec: ConvSpec) -> Result<NodeId> {
        self.conv_tagged(name, input, spec, PathTag::Shared)
    }

    fn conv_tagged(&mut self, name: &str, input: NodeId, spec: ConvSpec, path: PathTag) -> Result<NodeId> {
        let layer = ConvLayer::init(spec, &mut self.rng)?;
        Ok(self.push(name, Op::Conv(layer), vec![input], path))
    }

    pub fn bn(&mut self, name: &str, input: NodeId, channels: usize) -> NodeId {
        self.push(name, Op::Bn(BnLayer::new(channels)), vec![input], PathTag::Shared)
    }

    pub fn relu(&mut self, name: &str, input: NodeId) -> NodeId {
        self.push(name, Op::Relu, vec![input], PathTag::Shared)
    }

    pub fn max_pool(&mut self, name: &str, input: NodeId, spec: MaxPoolSpec) -> NodeId {
        self.push(name, Op::MaxPool(spec), vec![input], PathTag::Shared)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        self.push(name, Op::Add, vec![a, b], PathTag::Shared)
    }

    fn slice(&mut self, name: &str, input: NodeId, start: usize, end: usize, path: PathTag) -> NodeId {
        self.push(name, Op::Slice { start, end }, vec![input], path)
    }

    fn concat(&mut self, name: &str, inputs: Vec<NodeId>) -> NodeId {
        self.push(name, Op::Concat, inputs, PathTag::Shared)
    }

    /// Append a spatio-temporal block followed by its BN (named `bn_name`).
    ///
    /// The spatial stride `stride` is applied by every path; time is never strided.
    pub fn block(
        &mut self,
        name: &str,
        bn_name: &str,
        input: NodeId,
        spec: BlockSpec,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Result<NodeId> {
        spec.validate()?;
        let (kt, ks) = (spec.temporal_kernel, spec.spatial_kernel);
        let (pt, ps) = (kt / 2, ks / 2);
        let spatial = ConvSpec::new(c_in, c_out, [1, ks, ks])
            .padding([0, ps, ps])
            .stride([1, stride, stride]);
        let full = ConvSpec::new(c_in, c_out, [kt, ks, ks])
            .padding([pt, ps, ps])
            .stride([1, stride, stride]);
        let first = self.graph.nodes.len();
        let mut convs = Vec::new();
        let mut groups = Vec::new();
        let out = match spec.kind {
            BlockKind::C2D => {
                let c = self.conv(name, input, spatial)?;
                convs.push(c);
                c
            }
            BlockKind::C3D => {
                let c = self.conv(name, input, full)?;
                convs.push(c);
                c
            }
            BlockKind::C3DGroup(g) => {
                let c = self.conv(name, input, full.groups(g))?;
                convs.push(c);
                c
            }
            BlockKind::P3D => {
                let s = self.conv_tagged(&alloc::format!("{name}.spatial"), input, spatial, PathTag::Spatial)?;
                let b = self.bn(&alloc::format!("{name}.bn_mid"), s, c_out);
                let r = self.relu(&alloc::format!("{name}.relu_mid"), b);
                let temporal = ConvSpec::new(c_out, c_out, [kt, 1, 1]).padding([pt, 0, 0]);
                let t = self.conv_tagged(&alloc::format!("{name}.temporal"), r, temporal, PathTag::Temporal)?;
                convs.extend([s, t]);
                t
            }
            BlockKind::GST(_) | BlockKind::GSTLarge(_) => {
                let cfg = spec.gst_config().expect("parallel kinds carry alpha and beta");
                let split = cfg.split(c_in, c_out)?;
                let (s_in, t_in) = if split.in_spatial == c_in {
                    (input, input)
                } else {
                    (
                        self.slice(&alloc::format!("{name}.spatial_in"), input, 0, split.in_spatial, PathTag::Spatial),
                        self.slice(&alloc::format!("{name}.temporal_in"), input, c_in - split.in_temporal, c_in, PathTag::Temporal),
                    )
                };
                let sspec = ConvSpec::new(split.in_spatial, split.out_spatial, [1, ks, ks])
                    .padding([0, ps, ps])
                    .stride([1, stride, stride]);
                let tspec = ConvSpec::new(split.in_temporal, split.out_temporal, [kt, ks, ks])
                    .padding([pt, ps, ps])
                    .stride([1, stride, stride]);
                let s = self.conv_tagged(&alloc::format!("{name}.spatial"), s_in, sspec, PathTag::Spatial)?;
                let t = self.conv_tagged(&alloc::format!("{name}.temporal"), t_in, tspec, PathTag::Temporal)?;
                convs.extend([s, t]);
                groups = vec![
                    ChannelGroup { tag: PathTag::Spatial, start: 0, end: split.out_spatial },
                    ChannelGroup { tag: PathTag::Temporal, start: split.out_spatial, end: c_out },
                ];
                self.concat(&alloc::format!("{name}.concat"), vec![s, t])
            }
        };
        let bn = self.bn(bn_name, out, c_out);
        let unit = self.graph.units.len();
        self.graph.nodes[bn].meta.channel_groups = groups;
        for node in &mut self.graph.nodes[first..] {
            node.meta.unit = Some(unit);
        }
        self.graph.units.push(Unit {
            name: name.into(),
            spec,
            in_channels: c_in,
            out_channels: c_out,
            stride,
            stage: self.stage,
            block: self.block,
            convs,
            bn,
        });
        Ok(bn)
    }
}

/// Standalone GST (or GST-Large) block: `input -> paths -> concat -> BN`.
pub fn make_gst_block(c_in: usize, c_out: usize, cfg: GstConfig, seed: u64) -> Result<Graph> {
    if cfg.spatial_kernel[0] != cfg.spatial_kernel[1] {
        return Err(Error::InvalidConfig("only square spatial kernels are supported".into()));
    }
    let kind = match cfg.beta {
        crate::blocks::config::Beta::Full => BlockKind::GSTLarge(cfg.alpha),
        crate::blocks::config::Beta::Half => BlockKind::GST(cfg.alpha),
    };
    let spec = BlockSpec { kind, temporal_kernel: cfg.temporal_kernel, spatial_kernel: cfg.spatial_kernel[0] };
    make_block(spec, c_in, c_out, seed)
}

/// Standalone block of any kind followed by its BN, stride 1.
pub fn make_block(spec: impl Into<BlockSpec>, c_in: usize, c_out: usize, seed: u64) -> Result<Graph> {
    let mut b = GraphBuilder::new(c_in, seed);
    let input = b.input();
    b.block("block", "block.bn", input, spec.into(), c_in, c_out, 1)?;
    Ok(b.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResidualKind {
    /// Two 3x3 convolutions (ResNet-18/34).
    Basic,
    /// 1x1 reduce, 3x3, 1x1 expand by 4 (ResNet-50).
    Bottleneck,
}

impl ResidualKind {
    pub fn expansion(&self) -> usize {
        match self {
            ResidualKind::Basic => 1,
            ResidualKind::Bottleneck => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stem {
    /// 7x7 stride-2 convolution, BN, ReLU, 3x3 stride-2 max pool.
    Standard,
    /// 3x3 convolution with the given spatial stride, BN, ReLU.
    Compact { stride: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Backbone {
    ResNet18,
    ResNet50,
    Custom { residual: ResidualKind, stage_blocks: Vec<usize>, base_width: usize, stem: Stem },
}

impl Backbone {
    pub fn name(&self) -> &'static str {
        match self {
            Backbone::ResNet18 => "resnet18",
            Backbone::ResNet50 => "resnet50",
            Backbone::Custom { .. } => "custom",
        }
    }

    pub fn residual(&self) -> ResidualKind {
        match self {
            Backbone::ResNet18 => ResidualKind::Basic,
            Backbone::ResNet50 => ResidualKind::Bottleneck,
            Backbone::Custom { residual, .. } => *residual,
        }
    }

    pub fn stage_blocks(&self) -> Vec<usize> {
        match self {
            Backbone::ResNet18 => vec![2, 2, 2, 2],
            Backbone::ResNet50 => vec![3, 4, 6, 3],
            Backbone::Custom { stage_blocks, .. } => stage_blocks.clone(),
        }
    }

    pub fn base_width(&self) -> usize {
        match self {
            Backbone::Custom { base_width, .. } => *base_width,
            _ => 64,
        }
    }

    pub fn stem(&self) -> Stem {
        match self {
            Backbone::Custom { stem, .. } => *stem,
            _ => Stem::Standard,
        }
    }

    /// Stage widths `base * 2^s` (before bottleneck expansion).
    pub fn widths(&self) -> Vec<usize> {
        let b = self.base_width();
        (0..self.stage_blocks().len()).map(|s| b << s).collect()
    }
}

/// Everything needed to assemble a [`Network`](crate::blocks::Network).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub backbone: Backbone,
    pub block: BlockSpec,
    pub num_classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    /// Dropout rate before the classifier, train mode only.
    pub dropout: f64,
    pub seed: u64,
}

pub const DEFAULT_DROPOUT: f64 = 0.3;

impl NetworkSpec {
    pub fn new(backbone: Backbone, block: impl Into<BlockSpec>, num_classes: usize) -> Self {
        Self {
            backbone,
            block: block.into(),
            num_classes,
            frames: 8,
            height: 224,
            width: 224,
            in_channels: 3,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
        }
    }

    pub fn resnet50(block: impl Into<BlockSpec>, num_classes: usize) -> Self {
        Self::new(Backbone::ResNet50, block, num_classes)
    }

    pub fn resnet18(block: impl Into<BlockSpec>, num_classes: usize) -> Self {
        Self::new(Backbone::ResNet18, block, num_classes)
    }

    /// Two basic-block stages of widths 16 and 32 behind a stride-2 3x3 stem,
    /// on 8 frames of 32x32.
    pub fn tiny(block: impl Into<BlockSpec>, num_classes: usize) -> Self {
        let backbone = Backbone::Custom {
            residual: ResidualKind::Basic,
            stage_blocks: vec![1, 1],
            base_width: 16,
            stem: Stem::Compact { stride: 2 },
        };
        Self { frames: 8, height: 32, width: 32, ..Self::new(backbone, block, num_classes) }
    }

    pub fn frames(mut self, frames: usize) -> Self {
        self.frames = frames;
        self
    }

    pub fn size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn in_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn input_shape(&self, batch: usize) -> crate::tensor::Shape5 {
        crate::tensor::Shape5::new(batch, self.in_channels, self.frames, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes == 0 || self.frames == 0 || self.height == 0 || self.width == 0 || self.in_channels == 0 {
            return bad("classes, frames, size and input channels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(alloc::format!("dropout {} outside [0, 1)", self.dropout));
        }
        let stages = self.backbone.stage_blocks();
        if stages.is_empty() || stages.contains(&0) || self.backbone.base_width() == 0 {
            return bad("every stage needs at least one block and a positive width".into());
        }
        if let Stem::Compact { stride: 0 } = self.backbone.stem() {
            return bad("stem stride must be positive".into());
        }
        self.block.validate()
    }
}

/// Assemble the backbone graph (stem and residual stages, no classifier).
pub(crate) fn build_backbone(spec: &NetworkSpec) -> Result<(Graph, usize)> {
    spec.validate()?;
    let bb = &spec.backbone;
    let mut b = GraphBuilder::new(spec.in_channels, spec.seed);
    let width0 = bb.base_width();
    let mut x = b.input();
    match bb.stem() {
        Stem::Standard => {
            let conv = ConvSpec::new(spec.in_channels, width0, [1, 7, 7]).padding([0, 3, 3]).stride([1, 2, 2]);
            x = b.conv("stem.conv", x, conv)?;
            x = b.bn("stem.bn", x, width0);
            x = b.relu("stem.relu", x);
            x = b.max_pool("stem.pool", x, MaxPoolSpec::STEM);
        }
        Stem::Compact { stride } => {
            let conv = ConvSpec::spatial(spec.in_channels, width0, 3).stride([1, stride, stride]);
            x = b.conv("stem.conv", x, conv)?;
            x = b.bn("stem.bn", x, width0);
            x = b.relu("stem.relu", x);
        }
    }
    let residual = bb.residual();
    let exp = residual.expansion();
    let mut c_in = width0;
    for (s, (&blocks, width)) in bb.stage_blocks().iter().zip(bb.widths()).enumerate() {
        for k in 0..blocks {
            b.set_position(Some(s), Some(k));
            let stride = if s > 0 && k == 0 { 2 } else { 1 };
            let p = alloc::format!("layer{}.{}", s + 1, k);
            let c_out = width * exp;
            let main = match residual {
                ResidualKind::Bottleneck => {
                    let mut y = b.conv(&alloc::format!("{p}.conv1"), x, ConvSpec::new(c_in, width, [1, 1, 1]))?;
                    y = b.bn(&alloc::format!("{p}.bn1"), y, width);
                    y = b.relu(&alloc::format!("{p}.relu1"), y);
                    y = b.block(&alloc::format!("{p}.conv2"), &alloc::format!("{p}.bn2"), y, spec.block, width, width, stride)?;
                    y = b.relu(&alloc::format!("{p}.relu2"), y);
                    y = b.conv(&alloc::format!("{p}.conv3"), y, ConvSpec::new(width, c_out, [1, 1, 1]))?;
                    b.bn(&alloc::format!("{p}.bn3"), y, c_out)
                }
                ResidualKind::Basic => {
                    let mut y = b.block(&alloc::format!("{p}.conv1"), &alloc::format!("{p}.bn1"), x, spec.block, c_in, width, stride)?;
                    y = b.relu(&alloc::format!("{p}.relu1"), y);
                    b.block(&alloc::format!("{p}.conv2"), &alloc::format!("{p}.bn2"), y, spec.block, width, width, 1)?
                }
            };
            let shortcut = if stride != 1 || c_in != c_out {
                let ds = ConvSpec::new(c_in, c_out, [1, 1, 1]).stride([1, stride, stride]);
                let d = b.conv(&alloc::format!("{p}.downsample.conv"), x, ds)?;
                b.bn(&alloc::format!("{p}.downsample.bn"), d, c_out)
            } else {
                x
            };
            let sum = b.add(&alloc::format!("{p}.add"), main, shortcut);
            x = b.relu(&alloc::format!("{p}.relu_out"), sum);
            c_in = c_out;
        }
    }
    b.set_position(None, None);
    Ok((b.finish(), c_in))
}
