//! Checkpoint directories: `manifest.json` plus `weights.bin`, every tensor
//! stored as little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use gstnet_core::blocks::{make_network, Network, Op};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netspec::NetworkDoc;

pub const FORMAT: &str = "gstnet-checkpoint";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// `conv.weight`, `conv.bias`, `bn.scale`, `bn.shift`, `bn.running_mean`,
    /// `bn.running_var`, `linear.weight` or `linear.bias`.
    pub kind: String,
    pub shape: Vec<usize>,
    /// Byte offset into `weights.bin`.
    pub offset: u64,
    /// `spatial`, `temporal` or `shared`.
    pub path: String,
    /// Kind of the spatio-temporal block the layer belongs to, if any.
    pub block: Option<String>,
    pub alpha: Option<String>,
    pub beta: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub network: NetworkDoc,
    pub total_bytes: u64,
    pub tensors: Vec<TensorEntry>,
}

/// Every stored tensor of `net` in manifest order, with its values.
fn tensors(net: &Network) -> Vec<(TensorEntry, &[f64])> {
    let g = &net.graph;
    let mut out: Vec<(TensorEntry, &[f64])> = Vec::new();
    let mut offset = 0u64;
    for node in &g.nodes {
        let unit = node.meta.unit.map(|u| g.units[u].spec.kind);
        let entry = |suffix: &str, kind: &str, shape: Vec<usize>, offset: u64| TensorEntry {
            name: format!("{}.{suffix}", node.name),
            kind: kind.into(),
            shape,
            offset,
            path: node.meta.path.as_str().into(),
            block: unit.map(|k| k.name().into()),
            alpha: unit.and_then(|k| k.alpha()).map(|a| a.to_string()),
            beta: unit.and_then(|k| k.beta()).map(|b| b.ratio().to_string()),
        };
        match &node.op {
            Op::Conv(l) => {
                let s = l.weight.shape();
                out.push((entry("weight", "conv.weight", s.dims().to_vec(), offset), l.weight.data()));
                offset += 8 * l.weight.len() as u64;
                if let Some(b) = &l.bias {
                    out.push((entry("bias", "conv.bias", vec![b.len()], offset), b));
                    offset += 8 * b.len() as u64;
                }
            }
            Op::Bn(b) => {
                for (suffix, v) in [
                    ("scale", &b.scale),
                    ("shift", &b.shift),
                    ("running_mean", &b.running_mean),
                    ("running_var", &b.running_var),
                ] {
                    out.push((entry(suffix, &format!("bn.{suffix}"), vec![v.len()], offset), v));
                    offset += 8 * v.len() as u64;
                }
            }
            _ => {}
        }
    }
    let fc = &net.head.fc;
    let head = |suffix: &str, shape: Vec<usize>, offset: u64| TensorEntry {
        name: format!("head.fc.{suffix}"),
        kind: format!("linear.{suffix}"),
        shape,
        offset,
        path: "shared".into(),
        block: None,
        alpha: None,
        beta: None,
    };
    out.push((head("weight", vec![fc.out_features, fc.in_features], offset), &fc.weight));
    offset += 8 * fc.weight.len() as u64;
    out.push((head("bias", vec![fc.out_features], offset), &fc.bias));
    out
}

fn tensors_mut(net: &mut Network) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for node in &mut net.graph.nodes {
        match &mut node.op {
            Op::Conv(l) => {
                out.push(l.weight.data_mut());
                if let Some(b) = &mut l.bias {
                    out.push(b);
                }
            }
            Op::Bn(b) => {
                out.push(&mut b.scale);
                out.push(&mut b.shift);
                out.push(&mut b.running_mean);
                out.push(&mut b.running_var);
            }
            _ => {}
        }
    }
    out.push(&mut net.head.fc.weight);
    out.push(&mut net.head.fc.bias);
    out
}

pub fn manifest(net: &Network) -> Manifest {
    let t = tensors(net);
    let total_bytes = t.iter().map(|(_, v)| 8 * v.len() as u64).sum();
    Manifest {
        format: FORMAT.into(),
        version: VERSION,
        network: (&net.spec).into(),
        total_bytes,
        tensors: t.into_iter().map(|(e, _)| e).collect(),
    }
}

/// Concatenated little-endian parameter bytes.
pub fn weight_bytes(net: &Network) -> Vec<u8> {
    tensors(net).iter().flat_map(|(_, v)| v.iter().flat_map(|x| x.to_le_bytes())).collect()
}

pub fn save_checkpoint(net: &Network, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut json = serde_json::to_string_pretty(&manifest(net))?;
    json.push('\n');
    let m = dir.join(MANIFEST);
    fs::write(&m, json).map_err(Error::io(&m))?;
    let w = dir.join(WEIGHTS);
    fs::write(&w, weight_bytes(net)).map_err(Error::io(&w))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Network> {
    let m = dir.join(MANIFEST);
    let text = fs::read_to_string(&m).map_err(Error::io(&m))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Manifest(format!("format is {:?}, expected {FORMAT:?}", manifest.format)));
    }
    if manifest.version != VERSION {
        return Err(Error::Version { found: manifest.version, expected: VERSION });
    }
    let mut net = make_network(&manifest.network.to_spec()?)?;
    let expected = self::manifest(&net);
    if expected.tensors != manifest.tensors || expected.total_bytes != manifest.total_bytes {
        let first = expected
            .tensors
            .iter()
            .zip(&manifest.tensors)
            .find(|(a, b)| a != b)
            .map(|(a, _)| a.name.clone())
            .unwrap_or_else(|| "tensor count".into());
        return Err(Error::Manifest(format!("tensor list does not match the described network (first difference at {first})")));
    }
    let w = dir.join(WEIGHTS);
    let bytes = fs::read(&w).map_err(Error::io(&w))?;
    if bytes.len() as u64 != manifest.total_bytes {
        return Err(Error::WeightsLength { found: bytes.len() as u64, expected: manifest.total_bytes });
    }
    let mut chunks = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for t in tensors_mut(&mut net) {
        for x in t.iter_mut() {
            *x = chunks.next().expect("length checked above");
        }
    }
    Ok(net)
}
