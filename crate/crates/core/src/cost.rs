//! Parameter and multiply-accumulate accounting.
//!
//! Every spatio-temporal block is reported as one row whose enumerated
//! weight count sits next to its closed-form count; the two must agree
//! exactly. MACs count convolutions and the classifier only, one MAC being
//! reported as one FLOP.

use alloc::string::String;
use alloc::vec::Vec;

use crate::blocks::{make_network, BlockKind, BlockSpec, GstConfig, Network, NetworkSpec, Op};
use crate::error::{Error, Result};
use crate::tensor::Shape5;

pub const FLOP_CONVENTION: &str = "mac";

/// Closed-form weight count of one block (closing BN excluded).
///
/// `t` is the temporal kernel extent and `h x w` the spatial one. Channel
/// splits of the parallel kinds are the integer splits used by the
/// constructor, so the result is
/// `C_os * C_is * HW + C_ot * C_it * THW`.
pub fn block_params_closed_form(kind: BlockKind, c_in: usize, c_out: usize, t: usize, h: usize, w: usize) -> Result<u64> {
    let (ci, co, t, hw) = (c_in as u64, c_out as u64, t as u64, (h * w) as u64);
    Ok(match kind {
        BlockKind::C2D => hw * ci * co,
        BlockKind::C3D => t * hw * ci * co,
        BlockKind::P3D => hw * ci * co + t * co * co,
        BlockKind::C3DGroup(g) => {
            if g == 0 || c_in % g != 0 || c_out % g != 0 {
                return Err(Error::Divisibility { context: "grouped block", channels: c_in, divisor: g });
            }
            t * hw * ci * co / g as u64
        }
        BlockKind::GST(alpha) | BlockKind::GSTLarge(alpha) => {
            let beta = kind.beta().expect("parallel kind");
            let s = GstConfig::new(alpha, beta).split(c_in, c_out)?;
            s.out_spatial as u64 * s.in_spatial as u64 * hw + s.out_temporal as u64 * s.in_temporal as u64 * t * hw
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub layer: String,
    pub kind: String,
    pub params: u64,
    pub params_formula: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_params_formula: u64,
    pub total_macs: u64,
    /// Input used for the MAC column; `None` for parameter-only reports.
    pub input_shape: Option<Shape5>,
    pub flop_convention: &'static str,
}

impl CostReport {
    fn from_rows(rows: Vec<CostRow>, input_shape: Option<Shape5>) -> Self {
        Self {
            total_params: rows.iter().map(|r| r.params).sum(),
            total_params_formula: rows.iter().map(|r| r.params_formula).sum(),
            total_macs: rows.iter().map(|r| r.macs).sum(),
            rows,
            input_shape,
            flop_convention: FLOP_CONVENTION,
        }
    }

    pub fn gflops(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    /// Rows whose enumerated and closed-form counts disagree.
    pub fn mismatches(&self) -> impl Iterator<Item = &CostRow> {
        self.rows.iter().filter(|r| r.params != r.params_formula)
    }
}

fn report(net: &Network, input: Option<Shape5>) -> Result<CostReport> {
    let g = &net.graph;
    let shapes = match input {
        Some(s) => Some(g.infer_shapes(s)?),
        None => None,
    };
    let mut rows: Vec<CostRow> = Vec::new();
    let mut unit_row: Vec<Option<usize>> = alloc::vec![None; g.units.len()];
    for node in &g.nodes {
        match &node.op {
            Op::Conv(l) => {
                let s = l.spec;
                let params = (s.weight_count() + if s.bias { s.out_channels } else { 0 }) as u64;
                let macs = match &shapes {
                    Some(sh) => s.macs(sh[node.inputs[0]])?,
                    None => 0,
                };
                match node.meta.unit {
                    Some(u) => {
                        let unit = &g.units[u];
                        let r = match unit_row[u] {
                            Some(r) => r,
                            None => {
                                let spec: BlockSpec = unit.spec;
                                let formula = block_params_closed_form(
                                    spec.kind,
                                    unit.in_channels,
                                    unit.out_channels,
                                    spec.temporal_kernel,
                                    spec.spatial_kernel,
                                    spec.spatial_kernel,
                                )?;
                                rows.push(CostRow {
                                    layer: unit.name.clone(),
                                    kind: spec.kind.name().into(),
                                    params: 0,
                                    params_formula: formula,
                                    macs: 0,
                                });
                                unit_row[u] = Some(rows.len() - 1);
                                rows.len() - 1
                            }
                        };
                        rows[r].params += params;
                        rows[r].macs += macs;
                    }
                    None => {
                        let [kt, kh, kw] = s.kernel;
                        let formula = (s.out_channels * s.in_per_group() * kt * kh * kw
                            + if s.bias { s.out_channels } else { 0 }) as u64;
                        rows.push(CostRow { layer: node.name.clone(), kind: "conv".into(), params, params_formula: formula, macs });
                    }
                }
            }
            Op::Bn(b) => {
                let p = 2 * b.channels as u64;
                rows.push(CostRow { layer: node.name.clone(), kind: "bn".into(), params: p, params_formula: p, macs: 0 });
            }
            _ => {}
        }
    }
    let fc = &net.head.fc;
    let params = (fc.weight.len() + fc.bias.len()) as u64;
    let formula = (fc.in_features * fc.out_features + fc.out_features) as u64;
    let macs = match input {
        Some(s) => (s.n * s.t * fc.in_features * fc.out_features) as u64,
        None => 0,
    };
    rows.push(CostRow { layer: "head.fc".into(), kind: "linear".into(), params, params_formula: formula, macs });
    Ok(CostReport::from_rows(rows, input))
}

/// Learned parameters: conv weights, BN scale and shift, classifier weights and bias.
pub fn count_params(net: &Network) -> CostReport {
    report(net, None).expect("parameter counting needs no shapes")
}

/// Parameters plus MACs of one forward pass on `input`.
pub fn count_macs(net: &Network, input: Shape5) -> Result<CostReport> {
    report(net, Some(input))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub backbone: String,
    pub block: String,
    pub frames: usize,
    pub params: u64,
    pub macs: u64,
}

impl CompareRow {
    pub fn gflops(&self) -> f64 {
        self.macs as f64 / 1e9
    }
}

/// One row per spec, in the given order; each network sees one clip of its
/// own frame count and size.
pub fn compare(specs: &[NetworkSpec]) -> Result<Vec<CompareRow>> {
    if specs.is_empty() {
        return Err(Error::InvalidConfig("compare needs at least one network".into()));
    }
    specs
        .iter()
        .map(|spec| {
            let net = make_network(spec)?;
            let r = count_macs(&net, spec.input_shape(1))?;
            Ok(CompareRow {
                backbone: spec.backbone.name().into(),
                block: alloc::format!("{}", spec.block.kind),
                frames: spec.frames,
                params: r.total_params,
                macs: r.total_macs,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{make_block, Backbone, ResidualKind, Stem};
    use crate::ops::ConvSpec;
    use crate::ratio::Ratio;
    use alloc::vec;

    fn enumerate_block(kind: BlockKind, c_in: usize, c_out: usize) -> u64 {
        let g = make_block(kind, c_in, c_out, 0).unwrap();
        g.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Conv(l) => Some(l.weight.len() as u64),
                _ => None,
            })
            .sum()
    }

    #[test]
    fn table_rows_at_64_channels() {
        let f = |k| block_params_closed_form(k, 64, 64, 3, 3, 3).unwrap();
        assert_eq!(f(BlockKind::C2D), 36_864);
        assert_eq!(f(BlockKind::C3D), 110_592);
        assert_eq!(f(BlockKind::P3D), 49_152);
        assert_eq!(f(BlockKind::C3DGroup(2)), 55_296);
        assert_eq!(f(BlockKind::GST(Ratio::QUARTER)), 27_648);
        assert_eq!(f(BlockKind::GST(Ratio::HALF)), 36_864);
        assert_eq!(f(BlockKind::GSTLarge(Ratio::QUARTER)), 55_296);
    }

    #[test]
    fn closed_form_matches_enumeration() {
        for kind in [
            BlockKind::C2D,
            BlockKind::C3D,
            BlockKind::P3D,
            BlockKind::C3DGroup(2),
            BlockKind::GST(Ratio::QUARTER),
            BlockKind::GSTLarge(Ratio::EIGHTH),
        ] {
            for (ci, co) in [(16, 16), (16, 32), (32, 16)] {
                assert_eq!(
                    enumerate_block(kind, ci, co),
                    block_params_closed_form(kind, ci, co, 3, 3, 3).unwrap(),
                    "{kind} {ci}->{co}"
                );
            }
        }
    }

    #[test]
    fn invalid_groups() {
        assert!(block_params_closed_form(BlockKind::C3DGroup(3), 64, 64, 3, 3, 3).is_err());
        assert!(block_params_closed_form(BlockKind::GST(Ratio::QUARTER), 63, 64, 3, 3, 3).is_err());
    }

    #[test]
    fn one_by_one_conv_macs() {
        let spec = ConvSpec::new(1, 1, [1, 1, 1]);
        assert_eq!(spec.macs(Shape5::new(1, 1, 1, 4, 4)).unwrap(), 16);
    }

    #[test]
    fn totals_are_column_sums() {
        let spec = NetworkSpec::new(
            Backbone::Custom { residual: ResidualKind::Basic, stage_blocks: vec![1, 1], base_width: 8, stem: Stem::Compact { stride: 1 } },
            BlockKind::GST(Ratio::QUARTER),
            5,
        )
        .frames(4)
        .size(8, 8);
        let net = make_network(&spec).unwrap();
        let r = count_macs(&net, spec.input_shape(2)).unwrap();
        assert_eq!(r.total_params, r.rows.iter().map(|x| x.params).sum::<u64>());
        assert_eq!(r.total_macs, r.rows.iter().map(|x| x.macs).sum::<u64>());
        assert_eq!(r.total_params, net.param_count() as u64);
        assert_eq!(r.mismatches().count(), 0);
        let head = r.rows.last().unwrap();
        assert_eq!(head.macs, (2 * 4 * 16 * 5) as u64);
    }

    #[test]
    fn compare_rejects_empty() {
        assert!(compare(&[]).is_err());
    }
}
