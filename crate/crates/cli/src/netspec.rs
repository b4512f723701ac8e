//! Serializable description of a [`NetworkSpec`].

use gstnet_core::blocks::{Backbone, BlockKind, BlockSpec, NetworkSpec, ResidualKind, Stem};
use gstnet_core::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDoc {
    pub kind: String,
    pub alpha: Option<String>,
    pub beta: Option<String>,
    pub groups: Option<usize>,
    pub temporal_kernel: usize,
    pub spatial_kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneDoc {
    pub name: String,
    pub residual: String,
    pub stage_blocks: Vec<usize>,
    pub base_width: usize,
    /// `standard` or `compact`.
    pub stem: String,
    pub stem_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub backbone: BackboneDoc,
    pub block: BlockDoc,
    pub num_classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl From<&BlockSpec> for BlockDoc {
    fn from(b: &BlockSpec) -> Self {
        let k = b.kind;
        BlockDoc {
            kind: k.name().into(),
            alpha: k.alpha().map(|a| a.to_string()),
            beta: k.beta().map(|x| x.ratio().to_string()),
            groups: matches!(k, BlockKind::C3DGroup(_)).then(|| k.groups()),
            temporal_kernel: b.temporal_kernel,
            spatial_kernel: b.spatial_kernel,
        }
    }
}

fn parse_ratio(s: &Option<String>) -> Result<Option<Ratio>> {
    Ok(match s {
        Some(s) => Some(s.parse()?),
        None => None,
    })
}

impl BlockDoc {
    pub fn to_spec(&self) -> Result<BlockSpec> {
        let kind = BlockKind::from_parts(&self.kind, parse_ratio(&self.alpha)?, parse_ratio(&self.beta)?, self.groups)?;
        let spec = BlockSpec { kind, temporal_kernel: self.temporal_kernel, spatial_kernel: self.spatial_kernel };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<&NetworkSpec> for NetworkDoc {
    fn from(s: &NetworkSpec) -> Self {
        let b = &s.backbone;
        let (stem, stem_stride) = match b.stem() {
            Stem::Standard => ("standard", 2),
            Stem::Compact { stride } => ("compact", stride),
        };
        NetworkDoc {
            backbone: BackboneDoc {
                name: b.name().into(),
                residual: match b.residual() {
                    ResidualKind::Basic => "basic",
                    ResidualKind::Bottleneck => "bottleneck",
                }
                .into(),
                stage_blocks: b.stage_blocks(),
                base_width: b.base_width(),
                stem: stem.into(),
                stem_stride,
            },
            block: (&s.block).into(),
            num_classes: s.num_classes,
            frames: s.frames,
            height: s.height,
            width: s.width,
            in_channels: s.in_channels,
            dropout: s.dropout,
            seed: s.seed,
        }
    }
}

impl NetworkDoc {
    pub fn to_spec(&self) -> Result<NetworkSpec> {
        let b = &self.backbone;
        let backbone = match b.name.as_str() {
            "resnet18" => Backbone::ResNet18,
            "resnet50" => Backbone::ResNet50,
            "custom" => Backbone::Custom {
                residual: match b.residual.as_str() {
                    "basic" => ResidualKind::Basic,
                    "bottleneck" => ResidualKind::Bottleneck,
                    other => return Err(Error::Manifest(format!("unknown residual kind {other:?}"))),
                },
                stage_blocks: b.stage_blocks.clone(),
                base_width: b.base_width,
                stem: match b.stem.as_str() {
                    "standard" => Stem::Standard,
                    "compact" => Stem::Compact { stride: b.stem_stride },
                    other => return Err(Error::Manifest(format!("unknown stem {other:?}"))),
                },
            },
            other => return Err(Error::Manifest(format!("unknown backbone {other:?}"))),
        };
        let spec = NetworkSpec {
            backbone,
            block: self.block.to_spec()?,
            num_classes: self.num_classes,
            frames: self.frames,
            height: self.height,
            width: self.width,
            in_channels: self.in_channels,
            dropout: self.dropout,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}
