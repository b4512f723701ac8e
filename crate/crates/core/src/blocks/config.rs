use core::fmt;

use crate::error::{Error, Result};
use crate::ratio::Ratio;

/// Fraction of input channels each GST path reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Beta {
    /// Both paths read all input channels (GST-Large).
    Full,
    /// Spatial path reads the first half, temporal path the second half.
    Half,
}

impl Beta {
    pub fn ratio(self) -> Ratio {
        match self {
            Beta::Full => Ratio::ONE,
            Beta::Half => Ratio::HALF,
        }
    }

    pub fn from_ratio(r: Ratio) -> Result<Self> {
        if r == Ratio::ONE {
            Ok(Beta::Full)
        } else if r == Ratio::HALF {
            Ok(Beta::Half)
        } else {
            Err(Error::InvalidConfig(alloc::format!("beta must be 1 or 1/2, got {r}")))
        }
    }
}

/// Channel proportions and kernel sizes of a grouped spatial-temporal block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GstConfig {
    /// Proportion of output channels given to the temporal path.
    pub alpha: Ratio,
    pub beta: Beta,
    /// `(k_h, k_w)` of both paths.
    pub spatial_kernel: [usize; 2],
    /// `k_t` of the temporal path.
    pub temporal_kernel: usize,
}

/// Derived channel counts of one GST block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GstSplit {
    pub in_spatial: usize,
    pub in_temporal: usize,
    pub out_spatial: usize,
    pub out_temporal: usize,
}

impl GstConfig {
    pub fn new(alpha: Ratio, beta: Beta) -> Self {
        Self { alpha, beta, spatial_kernel: [3, 3], temporal_kernel: 3 }
    }

    pub fn split(&self, c_in: usize, c_out: usize) -> Result<GstSplit> {
        if self.alpha.num() == 0 || self.alpha.num() > self.alpha.den() {
            return Err(Error::InvalidConfig(alloc::format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        let in_each = match self.beta {
            Beta::Full => c_in,
            Beta::Half => {
                if c_in % 2 != 0 {
                    return Err(Error::Divisibility { context: "GST input split", channels: c_in, divisor: 2 });
                }
                c_in / 2
            }
        };
        let out_temporal = self.alpha.round_mul(c_out);
        let out_spatial = c_out.saturating_sub(out_temporal);
        if in_each == 0 || out_temporal == 0 || out_spatial == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "GST split of {c_in}->{c_out} with alpha {} leaves an empty path",
                self.alpha
            )));
        }
        Ok(GstSplit { in_spatial: in_each, in_temporal: in_each, out_spatial, out_temporal })
    }
}

/// The spatio-temporal block that stands in for each 3x3 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    C2D,
    C3D,
    C3DGroup(usize),
    P3D,
    GSTLarge(Ratio),
    GST(Ratio),
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::C2D => "c2d",
            BlockKind::C3D => "c3d",
            BlockKind::C3DGroup(_) => "c3d-group",
            BlockKind::P3D => "p3d",
            BlockKind::GSTLarge(_) => "gst-large",
            BlockKind::GST(_) => "gst",
        }
    }

    pub fn alpha(&self) -> Option<Ratio> {
        match self {
            BlockKind::GSTLarge(a) | BlockKind::GST(a) => Some(*a),
            _ => None,
        }
    }

    pub fn beta(&self) -> Option<Beta> {
        match self {
            BlockKind::GSTLarge(_) => Some(Beta::Full),
            BlockKind::GST(_) => Some(Beta::Half),
            _ => None,
        }
    }

    pub fn groups(&self) -> usize {
        match self {
            BlockKind::C3DGroup(g) => *g,
            _ => 1,
        }
    }

    pub fn is_parallel(&self) -> bool {
        matches!(self, BlockKind::GST(_) | BlockKind::GSTLarge(_))
    }

    /// Build from the parts used by the command line and checkpoint manifests.
    pub fn from_parts(name: &str, alpha: Option<Ratio>, beta: Option<Ratio>, groups: Option<usize>) -> Result<Self> {
        let alpha = || alpha.ok_or_else(|| Error::InvalidConfig(alloc::format!("block {name} needs alpha")));
        Ok(match name {
            "c2d" => BlockKind::C2D,
            "c3d" => BlockKind::C3D,
            "c3d-group" | "c3dgroup" => BlockKind::C3DGroup(groups.unwrap_or(2)),
            "p3d" => BlockKind::P3D,
            "gst-large" | "gstlarge" => BlockKind::GSTLarge(alpha()?),
            "gst" => match beta.map(Beta::from_ratio).transpose()? {
                Some(Beta::Full) => BlockKind::GSTLarge(alpha()?),
                _ => BlockKind::GST(alpha()?),
            },
            other => return Err(Error::InvalidConfig(alloc::format!("unknown block kind {other:?}"))),
        })
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockKind::C3DGroup(g) => write!(f, "c3d-group(g={g})"),
            BlockKind::GSTLarge(a) => write!(f, "gst-large(alpha={a})"),
            BlockKind::GST(a) => write!(f, "gst(alpha={a})"),
            other => f.write_str(other.name()),
        }
    }
}

/// A block kind together with its kernel extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub kind: BlockKind,
    /// Temporal extent of every temporal kernel in the block.
    pub temporal_kernel: usize,
    /// Square spatial extent of every spatial kernel in the block.
    pub spatial_kernel: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind) -> Self {
        Self { kind, temporal_kernel: 3, spatial_kernel: 3 }
    }

    pub fn temporal_kernel(mut self, k_t: usize) -> Self {
        self.temporal_kernel = k_t;
        self
    }

    pub fn gst_config(&self) -> Option<GstConfig> {
        Some(GstConfig {
            alpha: self.kind.alpha()?,
            beta: self.kind.beta()?,
            spatial_kernel: [self.spatial_kernel; 2],
            temporal_kernel: self.temporal_kernel,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.temporal_kernel == 0 || self.spatial_kernel == 0 {
            return Err(Error::InvalidConfig("block kernels must be positive".into()));
        }
        if self.temporal_kernel % 2 == 0 || self.spatial_kernel % 2 == 0 {
            return Err(Error::InvalidConfig("block kernels must be odd to preserve extents".into()));
        }
        if let BlockKind::C3DGroup(0) = self.kind {
            return Err(Error::InvalidConfig("groups must be at least 1".into()));
        }
        Ok(())
    }
}

impl From<BlockKind> for BlockSpec {
    fn from(kind: BlockKind) -> Self {
        Self::new(kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_split_of_64() {
        let s = GstConfig::new(Ratio::QUARTER, Beta::Half).split(64, 64).unwrap();
        assert_eq!(s, GstSplit { in_spatial: 32, in_temporal: 32, out_spatial: 48, out_temporal: 16 });
        let s = GstConfig::new(Ratio::QUARTER, Beta::Full).split(64, 64).unwrap();
        assert_eq!((s.in_spatial, s.in_temporal), (64, 64));
    }

    #[test]
    fn invalid_splits() {
        let half = GstConfig::new(Ratio::HALF, Beta::Half);
        assert!(matches!(half.split(7, 8), Err(Error::Divisibility { .. })));
        // alpha = 1 leaves nothing for the spatial path
        assert!(GstConfig::new(Ratio::ONE, Beta::Full).split(8, 8).is_err());
        // round(1/8 * 2) = 0 temporal channels
        assert!(GstConfig::new(Ratio::EIGHTH, Beta::Half).split(2, 2).is_err());
    }

    #[test]
    fn kind_from_parts() {
        let k = BlockKind::from_parts("gst", Some(Ratio::QUARTER), Some(Ratio::ONE), None).unwrap();
        assert_eq!(k, BlockKind::GSTLarge(Ratio::QUARTER));
        assert!(BlockKind::from_parts("gst", None, None, None).is_err());
        assert_eq!(BlockKind::from_parts("c3d-group", None, None, Some(4)).unwrap(), BlockKind::C3DGroup(4));
        assert!(BlockKind::from_parts("i3d", None, None, None).is_err());
    }
}
