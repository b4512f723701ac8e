//! Argument parsing and the six subcommands.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use gstnet_core::analysis::{extract_bn_attribution, per_frame_trace, shuffle_sensitivity, BnAttribution};
use gstnet_core::blocks::{make_network, BlockKind, BlockSpec, Network, NetworkSpec};
use gstnet_core::cost::{compare, count_macs, count_params};
use gstnet_core::data::{gen_synthetic, Motion, SyntheticSpec};
use gstnet_core::gradcheck::{run_suite, GradCheckConfig};
use gstnet_core::train::{evaluate, train, TrainConfig};
use gstnet_core::{Ratio, Tensor5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::netspec::NetworkDoc;
use crate::report::{self, Format, TrainSummary, SCHEMA_VERSION};

pub const OUTPUT_DIR_ENV: &str = "GSTNET_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "gstnet", version, about = "Grouped spatial-temporal convolution networks: cost analysis, gradient checks, training and diagnostics")]
pub struct Cli {
    /// Directory for reports when --output is not given.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learned parameters per layer, with closed-form counts for each block.
    Count(CostArgs),
    /// Multiply-accumulates of one forward pass, per layer.
    Flops(CostArgs),
    /// Finite-difference check of every layer kind, one block and a small network.
    Gradcheck(GradcheckArgs),
    /// Train a small network on the synthetic moving-square task.
    Train(TrainArgs),
    /// BN scale attribution, per-frame trace and shuffle sensitivity of a checkpoint.
    Analyze(AnalyzeArgs),
    /// Parameters and MACs of several block kinds on one backbone.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BlockName {
    C2d,
    C3d,
    #[value(name = "c3d-group")]
    C3dGroup,
    P3d,
    Gst,
    #[value(name = "gst-large")]
    GstLarge,
}

impl BlockName {
    fn as_str(self) -> &'static str {
        match self {
            BlockName::C2d => "c2d",
            BlockName::C3d => "c3d",
            BlockName::C3dGroup => "c3d-group",
            BlockName::P3d => "p3d",
            BlockName::Gst => "gst",
            BlockName::GstLarge => "gst-large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackboneName {
    Resnet18,
    Resnet50,
    /// Two basic-block stages of widths 16 and 32 behind a stride-2 3x3 stem.
    Tiny,
}

fn parse_ratio(s: &str) -> std::result::Result<Ratio, String> {
    s.parse::<Ratio>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct BlockArgs {
    /// Block substituted for every 3x3 convolution.
    #[arg(long, value_enum, default_value = "gst")]
    pub block: BlockName,
    /// Fraction of output channels on the temporal path (decimal or fraction).
    #[arg(long, value_parser = parse_ratio, default_value = "1/4")]
    pub alpha: Ratio,
    /// Fraction of input channels each path reads: 1/2 (GST) or 1 (GST-Large).
    #[arg(long, value_parser = parse_ratio)]
    pub beta: Option<Ratio>,
    /// Group count of c3d-group.
    #[arg(long, default_value_t = 2)]
    pub groups: usize,
    /// Temporal kernel extent.
    #[arg(long, default_value_t = 3)]
    pub temporal_kernel: usize,
}

impl BlockArgs {
    pub fn spec(&self) -> Result<BlockSpec> {
        let parallel = matches!(self.block, BlockName::Gst | BlockName::GstLarge);
        if !parallel && self.beta.is_some() {
            return Err(Error::Usage(format!("--beta applies to gst and gst-large, not {}", self.block.as_str())));
        }
        if self.block == BlockName::GstLarge && self.beta.is_some_and(|b| b != Ratio::ONE) {
            return Err(Error::Usage("gst-large reads all input channels; --beta must be 1".into()));
        }
        if self.block == BlockName::C3dGroup && self.groups == 0 {
            return Err(Error::Usage("--groups must be at least 1".into()));
        }
        let kind = BlockKind::from_parts(self.block.as_str(), Some(self.alpha), self.beta, Some(self.groups))?;
        let spec = BlockSpec::new(kind).temporal_kernel(self.temporal_kernel);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    #[arg(long, value_enum, default_value = "resnet50")]
    pub backbone: BackboneName,
    #[command(flatten)]
    pub block: BlockArgs,
    /// Frames per clip.
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Square input side in pixels.
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    /// Number of classes of the classifier.
    #[arg(long, default_value_t = 174)]
    pub classes: usize,
    #[arg(long, default_value_t = 3)]
    pub in_channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn backbone_spec(name: BackboneName, block: BlockSpec, classes: usize) -> NetworkSpec {
    match name {
        BackboneName::Resnet18 => NetworkSpec::resnet18(block, classes),
        BackboneName::Resnet50 => NetworkSpec::resnet50(block, classes),
        BackboneName::Tiny => NetworkSpec::tiny(block, classes),
    }
}

impl NetArgs {
    pub fn spec(&self) -> Result<NetworkSpec> {
        let spec = backbone_spec(self.backbone, self.block.spec()?, self.classes)
            .frames(self.frames)
            .size(self.size, self.size)
            .in_channels(self.in_channels)
            .seed(self.seed);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Report file; a directory receives `<command>.<format>`. Standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub block: BlockArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Parameter blocks of the assembled network to check.
    #[arg(long, default_value_t = 5)]
    pub network_blocks: usize,
    /// Entries perturbed per network parameter block.
    #[arg(long, default_value_t = 64)]
    pub max_entries: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub block: BlockArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Epochs at which the learning rate is multiplied by --lr-decay.
    #[arg(long, value_delimiter = ',', default_value = "15,25")]
    pub milestones: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    /// Frames per clip, also the number of sampled segments.
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Training clips per class.
    #[arg(long, default_value_t = 48)]
    pub per_class: usize,
    /// Evaluation clips per class.
    #[arg(long, default_value_t = 32)]
    pub eval_per_class: usize,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Run directory; receives checkpoint/, history.csv and summary.json.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MotionName {
    LeftToRight,
    RightToLeft,
    StaticTop,
    StaticBottom,
}

impl From<MotionName> for Motion {
    fn from(m: MotionName) -> Self {
        match m {
            MotionName::LeftToRight => Motion::LeftToRight,
            MotionName::RightToLeft => Motion::RightToLeft,
            MotionName::StaticTop => Motion::StaticTop,
            MotionName::StaticBottom => Motion::StaticBottom,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Class of the synthetic clip to trace.
    #[arg(long, value_enum, default_value = "left-to-right")]
    pub class: MotionName,
    /// Seed of the traced clip and of the shuffles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    /// Random frame permutations for the shuffle probe.
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long, value_enum, default_value = "resnet50")]
    pub backbone: BackboneName,
    /// Comma-separated kinds; `gst` and `gst-large` accept `:alpha`, `c3d-group` accepts `:groups`.
    #[arg(long, value_delimiter = ',', default_value = "c2d,gst:1/2,gst:1/4,gst:1/8,gst-large:1/4,c3d-group:2,c3d,p3d")]
    pub blocks: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    #[arg(long, default_value_t = 174)]
    pub classes: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

fn parse_block_item(item: &str) -> Result<BlockSpec> {
    let (name, arg) = match item.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (item.trim(), None),
    };
    let name = BlockName::from_str(name, true).map_err(|_| Error::Usage(format!("unknown block kind {name:?}")))?;
    let mut b = BlockArgs { block: name, alpha: Ratio::QUARTER, beta: None, groups: 2, temporal_kernel: 3 };
    match (name, arg) {
        (BlockName::Gst | BlockName::GstLarge, Some(a)) => b.alpha = parse_ratio(a).map_err(Error::Usage)?,
        (BlockName::C3dGroup, Some(g)) => b.groups = g.parse().map_err(|_| Error::Usage(format!("bad group count {g:?}")))?,
        (_, Some(a)) => return Err(Error::Usage(format!("{} takes no argument, got {a:?}", name.as_str()))),
        (_, None) => {}
    }
    b.spec()
}

/// What a command produced besides its report.
enum Outcome {
    Ok,
    /// Numerical check failed; exit code 2.
    Failed,
}

struct Ctx<'a> {
    output_dir: Option<PathBuf>,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn emit(&mut self, out: &OutputArgs, command: &str, content: &str) -> Result<()> {
        let file = match (&out.output, &self.output_dir) {
            (Some(p), _) if p.is_dir() => Some(p.join(format!("{command}.{}", out.format.extension()))),
            (Some(p), _) => Some(p.clone()),
            (None, Some(d)) => Some(d.join(format!("{command}.{}", out.format.extension()))),
            (None, None) => None,
        };
        match file {
            Some(f) => write_file(&f, content.as_bytes()),
            None => self.stdout.write_all(content.as_bytes()).map_err(Error::io("<stdout>")),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

fn cmd_cost(ctx: &mut Ctx, a: &CostArgs, flops: bool) -> Result<Outcome> {
    let spec = a.net.spec()?;
    let net = make_network(&spec)?;
    let report = if flops { count_macs(&net, spec.input_shape(1))? } else { count_params(&net) };
    let name = if flops { "flops" } else { "count" };
    let text = report::cost(&report, &(&spec).into(), name, a.out.format)?;
    ctx.emit(&a.out, name, &text)?;
    Ok(Outcome::Ok)
}

fn cmd_gradcheck(ctx: &mut Ctx, a: &GradcheckArgs) -> Result<Outcome> {
    let block = a.block.spec()?;
    if !(a.tol > 0.0) || !(a.step > 0.0) || a.max_entries == 0 {
        return Err(Error::Usage("--tol, --step and --max-entries must be positive".into()));
    }
    let cfg = GradCheckConfig { tol: a.tol, step: a.step, max_entries: None, seed: a.seed, ..Default::default() };
    let mut reports = gstnet_core::gradcheck::check_layers(a.seed, &cfg)?;
    reports.extend(gstnet_core::gradcheck::check_block(block, a.seed, &cfg)?);
    let net_cfg = GradCheckConfig { max_entries: Some(a.max_entries), ..cfg };
    let all = run_suite(block, a.seed, a.network_blocks, &net_cfg)?;
    reports.extend(all.into_iter().filter(|r| r.name.starts_with("network/")));
    let passed = reports.iter().all(|r| r.passed);
    let text = report::gradcheck(&reports, &block.kind.to_string(), a.seed, a.tol, a.step, a.out.format)?;
    ctx.emit(&a.out, "gradcheck", &text)?;
    for r in reports.iter().filter(|r| !r.passed) {
        let _ = writeln!(ctx.stderr, "gradcheck failed: {} (max relative error {:e})", r.name, r.max_rel_error);
    }
    Ok(if passed { Outcome::Ok } else { Outcome::Failed })
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> Result<Outcome> {
    let block = a.block.spec()?;
    let dir = a
        .output
        .clone()
        .or_else(|| ctx.output_dir.as_ref().map(|d| d.join("train")))
        .unwrap_or_else(|| PathBuf::from("gstnet-train"));
    let data_spec = |per_class, seed| SyntheticSpec {
        size: a.size,
        clip_len: a.frames,
        per_class,
        noise: a.noise,
        seed,
        ..Default::default()
    };
    let train_set = gen_synthetic(&data_spec(a.per_class, a.seed))?;
    let eval_set = gen_synthetic(&data_spec(a.eval_per_class, a.seed.wrapping_add(1)))?;
    let spec = NetworkSpec::tiny(block, train_set.num_classes())
        .frames(a.frames)
        .size(a.size, a.size)
        .in_channels(1)
        .dropout(a.dropout)
        .seed(a.seed);
    spec.validate()?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        milestones: a.milestones.clone(),
        lr_decay: a.lr_decay,
        dropout: Some(a.dropout),
        segments: a.frames,
        seed: a.seed,
    };
    if !(a.lr > 0.0) {
        return Err(Error::Usage("--lr must be positive".into()));
    }
    cfg.validate()?;
    let mut net = make_network(&spec)?;
    let start = Instant::now();
    let stderr = &mut *ctx.stderr;
    let history = train(&mut net, &train_set, Some(&eval_set), &cfg, |e, h| {
        let _ = writeln!(
            stderr,
            "epoch {e:>3}  lr {:.0e}  loss {:.4}  train {:.3}  eval {:.3}  {:.1}s",
            h.lr[e],
            h.train_loss[e],
            h.train_accuracy[e],
            h.eval_accuracy[e],
            start.elapsed().as_secs_f64()
        );
    })?;
    let eval = evaluate(&net, &eval_set, a.frames)?;
    let pair = |classes: &[Motion]| -> Result<Option<f64>> {
        let sub = eval_set.filter(classes);
        Ok(if sub.is_empty() { None } else { Some(evaluate(&net, &sub, a.frames)?.accuracy) })
    };
    let names: Vec<&str> = train_set.classes.iter().map(|c| c.name()).collect();
    let summary = TrainSummary {
        schema_version: SCHEMA_VERSION,
        network: (&spec).into(),
        epochs: a.epochs,
        final_train_loss: history.train_loss.last().copied(),
        eval_accuracy: eval.accuracy,
        per_class: TrainSummary::per_class(&names, &eval),
        order_pair_accuracy: pair(&[Motion::LeftToRight, Motion::RightToLeft])?,
        static_pair_accuracy: pair(&[Motion::StaticTop, Motion::StaticBottom])?,
    };
    save_checkpoint(&net, &dir.join("checkpoint"))?;
    write_file(&dir.join("history.csv"), report::history_csv(&history)?.as_bytes())?;
    let text = report::to_json(&summary)?;
    write_file(&dir.join("summary.json"), text.as_bytes())?;
    ctx.stdout.write_all(text.as_bytes()).map_err(Error::io("<stdout>"))?;
    let _ = writeln!(ctx.stderr, "wall clock {:.1}s, run written to {}", start.elapsed().as_secs_f64(), dir.display());
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct PathMeans {
    layer: String,
    spatial_mean_abs_scale: f64,
    temporal_mean_abs_scale: f64,
    temporal_exceeds_spatial: bool,
}

#[derive(Serialize)]
struct ShuffleDoc {
    trials: usize,
    mean_abs_logit_deviation: f64,
}

#[derive(Serialize)]
struct AnalyzeDoc<'a> {
    schema_version: u32,
    network: NetworkDoc,
    clip: String,
    attribution: Option<Vec<report::AttributionDoc<'a>>>,
    last_stage: Option<PathMeans>,
    trace: report::TraceDoc<'a>,
    shuffle: Option<ShuffleDoc>,
}

/// Means over the attribution entries of the deepest stage, pooled over its blocks.
fn last_stage_means(a: &[BnAttribution]) -> Option<PathMeans> {
    let stage = a.iter().filter_map(|x| x.stage).max();
    let last: Vec<&BnAttribution> = a.iter().filter(|x| x.stage == stage).collect();
    let pool = |f: fn(&BnAttribution) -> &[f64]| {
        let v: Vec<f64> = last.iter().flat_map(|x| f(x).iter().copied()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let spatial = pool(|x| &x.spatial.abs_scale);
    let temporal = pool(|x| &x.temporal.abs_scale);
    Some(PathMeans {
        layer: last.last()?.layer.clone(),
        spatial_mean_abs_scale: spatial,
        temporal_mean_abs_scale: temporal,
        temporal_exceeds_spatial: temporal > spatial,
    })
}

fn analysis_clip(net: &Network, class: MotionName, seed: u64) -> Result<(Tensor5, String)> {
    let s = &net.spec;
    if s.in_channels == 1 && s.height == s.width {
        let spec = SyntheticSpec { size: s.height, clip_len: s.frames, per_class: 1, seed, ..Default::default() };
        if let Ok(data) = gen_synthetic(&spec) {
            let m: Motion = class.into();
            if let Some(sample) = data.samples.iter().find(|x| data.classes[x.label] == m) {
                return Ok((sample.clip.clone(), format!("synthetic:{}", m.name())));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip = Tensor5::from_fn(s.input_shape(1), |_| rng.random_range(-1.0..1.0))?;
    Ok((clip, "uniform-random".into()))
}

fn cmd_analyze(ctx: &mut Ctx, a: &AnalyzeArgs) -> Result<Outcome> {
    if !a.checkpoint.join(crate::checkpoint::MANIFEST).is_file() {
        return Err(Error::Usage(format!("no checkpoint at {}", a.checkpoint.display())));
    }
    let net = load_checkpoint(&a.checkpoint)?;
    let attribution = match extract_bn_attribution(&net) {
        Ok(v) => Some(v),
        Err(gstnet_core::Error::InvalidConfig(_)) => None,
        Err(e) => return Err(e.into()),
    };
    if a.out.format == Format::Csv {
        let Some(attr) = &attribution else {
            return Err(Error::Usage("csv output is the BN histogram, and this network has no GST blocks".into()));
        };
        ctx.emit(&a.out, "analyze", &report::histogram_csv(attr)?)?;
        return Ok(Outcome::Ok);
    }
    let (clip, clip_name) = analysis_clip(&net, a.class, a.seed)?;
    let trace = per_frame_trace(&net, &clip, a.top_k)?;
    let shuffle = if clip.shape().t >= 2 && a.trials > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        Some(ShuffleDoc { trials: a.trials, mean_abs_logit_deviation: shuffle_sensitivity(&net, &clip, a.trials, &mut rng)? })
    } else {
        None
    };
    let doc = AnalyzeDoc {
        schema_version: SCHEMA_VERSION,
        network: (&net.spec).into(),
        clip: clip_name,
        last_stage: attribution.as_deref().and_then(last_stage_means),
        attribution: attribution.as_deref().map(report::attribution_docs),
        trace: report::trace_doc(&trace),
        shuffle,
    };
    ctx.emit(&a.out, "analyze", &report::to_json(&doc)?)?;
    Ok(Outcome::Ok)
}

fn cmd_compare(ctx: &mut Ctx, a: &CompareArgs) -> Result<Outcome> {
    if a.blocks.is_empty() {
        return Err(Error::Usage("--blocks needs at least one kind".into()));
    }
    let specs = a
        .blocks
        .iter()
        .map(|b| {
            let spec = backbone_spec(a.backbone, parse_block_item(b)?, a.classes).frames(a.frames).size(a.size, a.size);
            spec.validate()?;
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = compare(&specs)?;
    ctx.emit(&a.out, "compare", &report::compare(&rows, a.out.format)?)?;
    Ok(Outcome::Ok)
}

/// Run the command line and return the process exit code:
/// 0 success, 1 usage or input error, 2 numerical failure.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut ctx = Ctx { output_dir: cli.output_dir.clone(), stdout, stderr };
    let result = match &cli.command {
        Command::Count(a) => cmd_cost(&mut ctx, a, false),
        Command::Flops(a) => cmd_cost(&mut ctx, a, true),
        Command::Gradcheck(a) => cmd_gradcheck(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::Analyze(a) => cmd_analyze(&mut ctx, a),
        Command::Compare(a) => cmd_compare(&mut ctx, a),
    };
    match result {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::Failed) => 2,
        Err(e) => {
            let _ = writeln!(ctx.stderr, "error: {e}");
            if let Error::Usage(_) = e {
                let _ = writeln!(ctx.stderr, "\n{}", Cli::command().render_usage());
            }
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}
