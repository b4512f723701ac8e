//! The six block families, residual assembly and the frame-average head.

mod build;
mod config;
mod graph;
mod network;
mod sampler;

pub use build::{
    make_block, make_gst_block, Backbone, GraphBuilder, NetworkSpec, ResidualKind, Stem,
    DEFAULT_DROPOUT,
};
pub use config::{Beta, BlockKind, BlockSpec, GstConfig, GstSplit};
pub use graph::{ChannelGroup, Graph, Node, NodeId, NodeMeta, Op, ParamMut, ParamRef, PathTag, Tape, Unit};
pub use network::{make_network, order_free_mean, Head, NetOutput, NetTape, Network};
pub use sampler::sample_segments;
