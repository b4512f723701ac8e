//! Layer graphs in topological order with a recorded forward pass.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::blocks::config::BlockSpec;
use crate::error::{shape_err, Error, Result};
use crate::ops::{
    bn_apply, bn_backward, conv_backward_accumulate, conv_forward, max_pool_spatial,
    max_pool_spatial_backward, relu, relu_backward, BatchStats, BnCache, BnLayer, ConvLayer,
    MaxPoolSpec, Mode,
};
use crate::tensor::{Shape5, Tensor5};

pub type NodeId = usize;

/// Which path of a spatio-temporal block a node or channel range belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PathTag {
    Spatial,
    Temporal,
    #[default]
    Shared,
}

impl PathTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            PathTag::Spatial => "spatial",
            PathTag::Temporal => "temporal",
            PathTag::Shared => "shared",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spatial" => Some(PathTag::Spatial),
            "temporal" => Some(PathTag::Temporal),
            "shared" => Some(PathTag::Shared),
            _ => None,
        }
    }
}

/// Channels `[start, end)` of a node's output produced by one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelGroup {
    pub tag: PathTag,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeMeta {
    pub stage: Option<usize>,
    pub block: Option<usize>,
    pub path: PathTag,
    /// Index into [`Graph::units`] when the node belongs to a substituted block.
    pub unit: Option<usize>,
    /// Path ranges of this node's output channels (set on the BN after a parallel block).
    pub channel_groups: Vec<ChannelGroup>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input { channels: usize },
    Conv(ConvLayer),
    Bn(BnLayer),
    Relu,
    MaxPool(MaxPoolSpec),
    /// Channels `[start, end)` of the single input.
    Slice { start: usize, end: usize },
    /// Channel concatenation of all inputs, in order.
    Concat,
    Add,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Conv(_) => "conv",
            Op::Bn(_) => "bn",
            Op::Relu => "relu",
            Op::MaxPool(_) => "maxpool",
            Op::Slice { .. } => "slice",
            Op::Concat => "concat",
            Op::Add => "add",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub meta: NodeMeta,
}

/// One spatio-temporal block standing in for a 3x3 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub name: String,
    pub spec: BlockSpec,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub stage: Option<usize>,
    pub block: Option<usize>,
    /// Convolutions of the block, spatial path first.
    pub convs: Vec<NodeId>,
    /// The BN that closes the block.
    pub bn: NodeId,
}

/// Nodes in topological order. Node 0 is the input, the last node the output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub nodes: Vec<Node>,
    pub units: Vec<Unit>,
}

#[derive(Debug, Clone, PartialEq)]
enum Aux {
    None,
    Bn(BnCache),
    Pool(Vec<usize>),
}

/// Activations recorded by [`Graph::forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    pub mode: Mode,
    outputs: Vec<Tensor5>,
    aux: Vec<Aux>,
    /// Batch statistics of every BN node, train mode only.
    pub bn_stats: Vec<(NodeId, BatchStats)>,
}

impl Tape {
    pub fn output(&self) -> &Tensor5 {
        self.outputs.last().expect("tape of an empty graph")
    }

    pub fn node_output(&self, id: NodeId) -> &Tensor5 {
        &self.outputs[id]
    }
}

/// Borrowed view of one learned parameter block and its gradient.
pub struct ParamMut<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

pub struct ParamRef<'a> {
    pub name: String,
    pub value: &'a [f64],
    pub grad: &'a [f64],
}

fn add_grad(grads: &mut [Option<Tensor5>], id: NodeId, g: Tensor5) -> Result<()> {
    match &mut grads[id] {
        Some(acc) => acc.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl Graph {
    pub fn input_channels(&self) -> usize {
        match self.nodes.first().map(|n| &n.op) {
            Some(Op::Input { channels }) => *channels,
            _ => 0,
        }
    }

    pub fn output_id(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Output shape of every node for a given input shape, without computing values.
    pub fn infer_shapes(&self, input: Shape5) -> Result<Vec<Shape5>> {
        let mut shapes: Vec<Shape5> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let inp = |k: usize| shapes[node.inputs[k]];
            let s = match &node.op {
                Op::Input { channels } => {
                    if input.c != *channels {
                        return Err(shape_err("network input channels", channels, input.c));
                    }
                    input
                }
                Op::Conv(l) => l.spec.output_shape(inp(0))?,
                Op::Bn(b) => {
                    if inp(0).c != b.channels {
                        return Err(shape_err("bn channels", b.channels, inp(0).c));
                    }
                    inp(0)
                }
                Op::Relu => inp(0),
                Op::MaxPool(p) => p.output_shape(inp(0))?,
                Op::Slice { start, end } => {
                    if *end > inp(0).c {
                        return Err(shape_err("slice channels", inp(0).c, end));
                    }
                    inp(0).with_c(end - start)
                }
                Op::Concat => {
                    let c = node.inputs.iter().map(|&i| shapes[i].c).sum();
                    inp(0).with_c(c)
                }
                Op::Add => {
                    if inp(0) != inp(1) {
                        return Err(shape_err("residual add", inp(0), inp(1)));
                    }
                    inp(0)
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    /// Run every node. Train-mode BN uses batch statistics, which are returned
    /// in the tape rather than written back; see [`Graph::apply_bn_stats`].
    pub fn forward(&self, input: &Tensor5, mode: Mode) -> Result<Tape> {
        let mut outputs: Vec<Tensor5> = Vec::with_capacity(self.nodes.len());
        let mut aux = Vec::with_capacity(self.nodes.len());
        let mut bn_stats = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let x = |k: usize| &outputs[node.inputs[k]];
            let (out, a) = match &node.op {
                Op::Input { channels } => {
                    if input.shape().c != *channels {
                        return Err(shape_err("network input channels", channels, input.shape().c));
                    }
                    (input.clone(), Aux::None)
                }
                Op::Conv(layer) => (conv_forward(x(0), layer)?, Aux::None),
                Op::Bn(layer) => {
                    let (y, cache, stats) = bn_apply(x(0), layer, mode)?;
                    if let Some(s) = stats {
                        bn_stats.push((id, s));
                    }
                    (y, Aux::Bn(cache))
                }
                Op::Relu => (relu(x(0)), Aux::None),
                Op::MaxPool(spec) => {
                    let (y, am) = max_pool_spatial(x(0), *spec)?;
                    (y, Aux::Pool(am))
                }
                Op::Slice { start, end } => (x(0).slice_channels(*start, *end)?, Aux::None),
                Op::Concat => {
                    let parts: Vec<&Tensor5> = node.inputs.iter().map(|&i| &outputs[i]).collect();
                    (Tensor5::concat_channels(&parts)?, Aux::None)
                }
                Op::Add => {
                    let mut y = x(0).clone();
                    y.axpy(1.0, x(1))?;
                    (y, Aux::None)
                }
            };
            outputs.push(out);
            aux.push(a);
        }
        Ok(Tape { mode, outputs, aux, bn_stats })
    }

    pub fn apply_bn_stats(&mut self, tape: &Tape) {
        for (id, stats) in &tape.bn_stats {
            if let Op::Bn(layer) = &mut self.nodes[*id].op {
                layer.update_running(stats);
            }
        }
    }

    /// Back-propagate `grad_out` (gradient of the output node), adding
    /// parameter gradients into the layers' slots. Returns the input gradient.
    pub fn backward(&mut self, tape: &Tape, grad_out: Tensor5) -> Result<Tensor5> {
        if tape.outputs.len() != self.nodes.len() {
            return Err(shape_err("backward tape length", self.nodes.len(), tape.outputs.len()));
        }
        if grad_out.shape() != tape.output().shape() {
            return Err(shape_err("backward grad_out", tape.output().shape(), grad_out.shape()));
        }
        let mut grads: Vec<Option<Tensor5>> = vec![None; self.nodes.len()];
        let last = self.output_id();
        grads[last] = Some(grad_out);
        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut self.nodes[id];
            let inputs = node.inputs.clone();
            match &mut node.op {
                Op::Input { .. } => return Ok(g),
                Op::Conv(layer) => {
                    let gi = conv_backward_accumulate(&tape.outputs[inputs[0]], layer, &g)?;
                    add_grad(&mut grads, inputs[0], gi)?;
                }
                Op::Bn(layer) => {
                    let Aux::Bn(cache) = &tape.aux[id] else {
                        return Err(Error::InvalidConfig("tape does not match graph".into()));
                    };
                    let gi = bn_backward(cache, layer, &g)?;
                    add_grad(&mut grads, inputs[0], gi)?;
                }
                Op::Relu => {
                    let gi = relu_backward(&tape.outputs[inputs[0]], &g)?;
                    add_grad(&mut grads, inputs[0], gi)?;
                }
                Op::MaxPool(_) => {
                    let Aux::Pool(am) = &tape.aux[id] else {
                        return Err(Error::InvalidConfig("tape does not match graph".into()));
                    };
                    let gi = max_pool_spatial_backward(tape.outputs[inputs[0]].shape(), am, &g)?;
                    add_grad(&mut grads, inputs[0], gi)?;
                }
                Op::Slice { start, end } => {
                    let src = tape.outputs[inputs[0]].shape();
                    let mut gi = Tensor5::zeros(src)?;
                    let width = *end - *start;
                    for n in 0..src.n {
                        for c in 0..width {
                            gi.channel_mut(n, *start + c).copy_from_slice(g.channel(n, c));
                        }
                    }
                    add_grad(&mut grads, inputs[0], gi)?;
                }
                Op::Concat => {
                    let mut offset = 0;
                    for &i in &inputs {
                        let c = tape.outputs[i].shape().c;
                        add_grad(&mut grads, i, g.slice_channels(offset, offset + c)?)?;
                        offset += c;
                    }
                }
                Op::Add => {
                    add_grad(&mut grads, inputs[1], g.clone())?;
                    add_grad(&mut grads, inputs[0], g)?;
                }
            }
        }
        Tensor5::zeros(tape.outputs[0].shape())
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv(l) => l.zero_grad(),
                Op::Bn(b) => b.zero_grad(),
                _ => {}
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            let name = &node.name;
            match &mut node.op {
                Op::Conv(l) => {
                    out.push(ParamMut {
                        name: alloc::format!("{name}.weight"),
                        value: l.weight.data_mut(),
                        grad: l.grad_weight.data_mut(),
                    });
                    if let (Some(b), Some(gb)) = (&mut l.bias, &mut l.grad_bias) {
                        out.push(ParamMut { name: alloc::format!("{name}.bias"), value: b, grad: gb });
                    }
                }
                Op::Bn(b) => {
                    out.push(ParamMut {
                        name: alloc::format!("{name}.scale"),
                        value: &mut b.scale,
                        grad: &mut b.grad_scale,
                    });
                    out.push(ParamMut {
                        name: alloc::format!("{name}.shift"),
                        value: &mut b.shift,
                        grad: &mut b.grad_shift,
                    });
                }
                _ => {}
            }
        }
        out
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let name = &node.name;
            match &node.op {
                Op::Conv(l) => {
                    out.push(ParamRef {
                        name: alloc::format!("{name}.weight"),
                        value: l.weight.data(),
                        grad: l.grad_weight.data(),
                    });
                    if let (Some(b), Some(gb)) = (&l.bias, &l.grad_bias) {
                        out.push(ParamRef { name: alloc::format!("{name}.bias"), value: b, grad: gb });
                    }
                }
                Op::Bn(b) => {
                    out.push(ParamRef { name: alloc::format!("{name}.scale"), value: &b.scale, grad: &b.grad_scale });
                    out.push(ParamRef { name: alloc::format!("{name}.shift"), value: &b.shift, grad: &b.grad_shift });
                }
                _ => {}
            }
        }
        out
    }

    pub fn conv(&self, id: NodeId) -> Option<&ConvLayer> {
        match &self.nodes.get(id)?.op {
            Op::Conv(l) => Some(l),
            _ => None,
        }
    }

    pub fn conv_mut(&mut self, id: NodeId) -> Option<&mut ConvLayer> {
        match &mut self.nodes.get_mut(id)?.op {
            Op::Conv(l) => Some(l),
            _ => None,
        }
    }

    pub fn bn(&self, id: NodeId) -> Option<&BnLayer> {
        match &self.nodes.get(id)?.op {
            Op::Bn(b) => Some(b),
            _ => None,
        }
    }

    pub fn bn_mut(&mut self, id: NodeId) -> Option<&mut BnLayer> {
        match &mut self.nodes.get_mut(id)?.op {
            Op::Bn(b) => Some(b),
            _ => None,
        }
    }

    /// True when no convolution in the graph mixes frames.
    pub fn is_frame_local(&self) -> bool {
        self.nodes.iter().all(|n| match &n.op {
            Op::Conv(l) => l.spec.is_spatial_only(),
            _ => true,
        })
    }
}
