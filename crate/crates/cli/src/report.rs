//! JSON and CSV renderings of every report. Output is a pure function of
//! its input, so identical runs give identical bytes.

use gstnet_core::analysis::{BnAttribution, FrameTrace, PathStats};
use gstnet_core::cost::{CompareRow, CostReport};
use gstnet_core::gradcheck::GradCheckReport;
use gstnet_core::train::{EvalReport, TrainHistory};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netspec::NetworkDoc;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>")(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct CostRowDoc<'a> {
    layer: &'a str,
    kind: &'a str,
    params: u64,
    params_formula: u64,
    macs: u64,
}

#[derive(Serialize)]
struct CostDoc<'a> {
    schema_version: u32,
    report: &'a str,
    network: &'a NetworkDoc,
    flop_convention: &'a str,
    input_shape: Option<[usize; 5]>,
    total_params: u64,
    total_params_formula: u64,
    total_macs: u64,
    mparams: f64,
    gmacs: f64,
    formula_mismatches: usize,
    rows: Vec<CostRowDoc<'a>>,
}

pub const COST_COLUMNS: [&str; 5] = ["layer", "kind", "params", "params_formula", "macs"];

/// `report` names the producing command, `count` or `flops`.
pub fn cost(r: &CostReport, network: &NetworkDoc, report: &str, format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(&CostDoc {
            schema_version: SCHEMA_VERSION,
            report,
            network,
            flop_convention: r.flop_convention,
            input_shape: r.input_shape.map(|s| s.dims()),
            total_params: r.total_params,
            total_params_formula: r.total_params_formula,
            total_macs: r.total_macs,
            mparams: r.mparams(),
            gmacs: r.gflops(),
            formula_mismatches: r.mismatches().count(),
            rows: r
                .rows
                .iter()
                .map(|x| CostRowDoc {
                    layer: &x.layer,
                    kind: &x.kind,
                    params: x.params,
                    params_formula: x.params_formula,
                    macs: x.macs,
                })
                .collect(),
        }),
        Format::Csv => {
            let total = vec![
                "total".into(),
                "total".into(),
                r.total_params.to_string(),
                r.total_params_formula.to_string(),
                r.total_macs.to_string(),
            ];
            let rows = r.rows.iter().map(|x| {
                vec![x.layer.clone(), x.kind.clone(), x.params.to_string(), x.params_formula.to_string(), x.macs.to_string()]
            });
            csv_string(&COST_COLUMNS, rows.chain(std::iter::once(total)))
        }
    }
}

#[derive(Serialize)]
struct CompareRowDoc<'a> {
    backbone: &'a str,
    block: &'a str,
    frames: usize,
    params: u64,
    macs: u64,
    mparams: f64,
    gmacs: f64,
}

#[derive(Serialize)]
struct CompareDoc<'a> {
    schema_version: u32,
    flop_convention: &'a str,
    rows: Vec<CompareRowDoc<'a>>,
}

pub fn compare(rows: &[CompareRow], format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(&CompareDoc {
            schema_version: SCHEMA_VERSION,
            flop_convention: gstnet_core::cost::FLOP_CONVENTION,
            rows: rows
                .iter()
                .map(|r| CompareRowDoc {
                    backbone: &r.backbone,
                    block: &r.block,
                    frames: r.frames,
                    params: r.params,
                    macs: r.macs,
                    mparams: r.params as f64 / 1e6,
                    gmacs: r.gflops(),
                })
                .collect(),
        }),
        Format::Csv => csv_string(
            &["backbone", "block", "frames", "params", "macs"],
            rows.iter().map(|r| {
                vec![r.backbone.clone(), r.block.clone(), r.frames.to_string(), r.params.to_string(), r.macs.to_string()]
            }),
        ),
    }
}

#[derive(Serialize)]
struct GradCheckRowDoc<'a> {
    name: &'a str,
    max_abs_error: f64,
    max_rel_error: f64,
    checked: usize,
    passed: bool,
}

#[derive(Serialize)]
struct GradCheckDoc<'a> {
    schema_version: u32,
    block: &'a str,
    seed: u64,
    tolerance: f64,
    step: f64,
    passed: bool,
    checks: Vec<GradCheckRowDoc<'a>>,
}

pub fn gradcheck(reports: &[GradCheckReport], block: &str, seed: u64, tolerance: f64, step: f64, format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(&GradCheckDoc {
            schema_version: SCHEMA_VERSION,
            block,
            seed,
            tolerance,
            step,
            passed: reports.iter().all(|r| r.passed),
            checks: reports
                .iter()
                .map(|r| GradCheckRowDoc {
                    name: &r.name,
                    max_abs_error: r.max_abs_error,
                    max_rel_error: r.max_rel_error,
                    checked: r.checked,
                    passed: r.passed,
                })
                .collect(),
        }),
        Format::Csv => csv_string(
            &["name", "max_abs_error", "max_rel_error", "checked", "passed"],
            reports.iter().map(|r| {
                vec![
                    r.name.clone(),
                    r.max_abs_error.to_string(),
                    r.max_rel_error.to_string(),
                    r.checked.to_string(),
                    r.passed.to_string(),
                ]
            }),
        ),
    }
}

pub const HISTORY_COLUMNS: [&str; 5] = ["epoch", "lr", "train_loss", "train_accuracy", "eval_accuracy"];

pub fn history_csv(h: &TrainHistory) -> Result<String> {
    csv_string(
        &HISTORY_COLUMNS,
        (0..h.train_loss.len()).map(|e| {
            vec![
                e.to_string(),
                h.lr[e].to_string(),
                h.train_loss[e].to_string(),
                h.train_accuracy[e].to_string(),
                h.eval_accuracy.get(e).map(|a| a.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

#[derive(Serialize)]
pub struct ClassScore {
    pub class: String,
    pub accuracy: Option<f64>,
}

#[derive(Serialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub network: NetworkDoc,
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub eval_accuracy: f64,
    pub per_class: Vec<ClassScore>,
    pub order_pair_accuracy: Option<f64>,
    pub static_pair_accuracy: Option<f64>,
}

impl TrainSummary {
    pub fn per_class(classes: &[&str], eval: &EvalReport) -> Vec<ClassScore> {
        classes
            .iter()
            .zip(&eval.per_class)
            .map(|(c, a)| ClassScore { class: (*c).into(), accuracy: *a })
            .collect()
    }
}

#[derive(Serialize)]
struct PathDoc<'a> {
    channels: usize,
    mean_abs_scale: f64,
    median_abs_scale: f64,
    abs_scale: &'a [f64],
    histogram: &'a [usize],
}

impl<'a> From<&'a PathStats> for PathDoc<'a> {
    fn from(p: &'a PathStats) -> Self {
        PathDoc {
            channels: p.abs_scale.len(),
            mean_abs_scale: p.mean,
            median_abs_scale: p.median,
            abs_scale: &p.abs_scale,
            histogram: &p.histogram,
        }
    }
}

#[derive(Serialize)]
pub struct AttributionDoc<'a> {
    layer: &'a str,
    stage: Option<usize>,
    block: Option<usize>,
    bin_edges: &'a [f64],
    spatial: PathDoc<'a>,
    temporal: PathDoc<'a>,
}

pub fn attribution_docs(a: &[BnAttribution]) -> Vec<AttributionDoc<'_>> {
    a.iter()
        .map(|x| AttributionDoc {
            layer: &x.layer,
            stage: x.stage,
            block: x.block,
            bin_edges: &x.bin_edges,
            spatial: (&x.spatial).into(),
            temporal: (&x.temporal).into(),
        })
        .collect()
}

pub const HISTOGRAM_COLUMNS: [&str; 5] = ["layer", "bin_left", "bin_right", "spatial_count", "temporal_count"];

/// One row per (block, bin).
pub fn histogram_csv(a: &[BnAttribution]) -> Result<String> {
    csv_string(
        &HISTOGRAM_COLUMNS,
        a.iter().flat_map(|x| {
            (0..x.spatial.histogram.len()).map(move |i| {
                vec![
                    x.layer.clone(),
                    x.bin_edges[i].to_string(),
                    x.bin_edges[i + 1].to_string(),
                    x.spatial.histogram[i].to_string(),
                    x.temporal.histogram[i].to_string(),
                ]
            })
        }),
    )
}

#[derive(Serialize)]
struct FrameDoc {
    frame: usize,
    top: Vec<TopDoc>,
}

#[derive(Serialize)]
struct TopDoc {
    class: usize,
    score: f64,
}

#[derive(Serialize)]
pub struct TraceDoc<'a> {
    frames: Vec<FrameDoc>,
    clip_logits: &'a [f64],
    clip_probabilities: &'a [f64],
    prediction: usize,
}

pub fn trace_doc(t: &FrameTrace) -> TraceDoc<'_> {
    TraceDoc {
        frames: t
            .frames
            .iter()
            .enumerate()
            .map(|(frame, top)| FrameDoc { frame, top: top.iter().map(|&(class, score)| TopDoc { class, score }).collect() })
            .collect(),
        clip_logits: &t.clip_logits,
        clip_probabilities: &t.clip_probabilities,
        prediction: t.prediction,
    }
}
