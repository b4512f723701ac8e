use std::fs;
use std::path::Path;
use std::process::Command;

use gstnet::checkpoint::{self, load_checkpoint, save_checkpoint};
use gstnet::cli::run;
use gstnet::Error;
use gstnet_core::blocks::{make_network, BlockKind, NetworkSpec};
use gstnet_core::{Ratio, Tensor5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn gstnet(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["gstnet"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn clip(shape: [usize; 5], seed: u64) -> Tensor5 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor5::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

fn tiny(kind: BlockKind) -> NetworkSpec {
    NetworkSpec::tiny(kind, 4).in_channels(1).size(16, 16).frames(4).seed(5)
}

#[test]
fn checkpoint_round_trip_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let kinds = [
        BlockKind::C2D,
        BlockKind::C3D,
        BlockKind::C3DGroup(2),
        BlockKind::P3D,
        BlockKind::GST(Ratio::QUARTER),
        BlockKind::GSTLarge(Ratio::QUARTER),
    ];
    for (i, kind) in kinds.into_iter().enumerate() {
        let mut net = make_network(&tiny(kind)).unwrap();
        // move every learned value away from its initialisation
        for x in net.graph.params_mut().into_iter().flat_map(|p| p.value.iter_mut()) {
            *x += 0.01;
        }
        let a = dir.path().join(format!("a{i}"));
        let b = dir.path().join(format!("b{i}"));
        save_checkpoint(&net, &a).unwrap();
        let back = load_checkpoint(&a).unwrap();
        let x = clip([2, 1, 4, 16, 16], i as u64);
        assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap(), "{kind}");
        save_checkpoint(&back, &b).unwrap();
        for f in [checkpoint::MANIFEST, checkpoint::WEIGHTS] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{kind} {f}");
        }
    }
}

fn saved(dir: &Path) {
    save_checkpoint(&make_network(&tiny(BlockKind::GST(Ratio::QUARTER))).unwrap(), dir).unwrap();
}

#[test]
fn truncated_weights_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    saved(dir.path());
    let w = dir.path().join(checkpoint::WEIGHTS);
    let bytes = fs::read(&w).unwrap();
    fs::write(&w, &bytes[..bytes.len() - 8]).unwrap();
    match load_checkpoint(dir.path()) {
        Err(Error::WeightsLength { found, expected }) => assert_eq!(found + 8, expected),
        other => panic!("{other:?}"),
    }
}

#[test]
fn foreign_version_and_format_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    saved(dir.path());
    let m = dir.path().join(checkpoint::MANIFEST);
    let text = fs::read_to_string(&m).unwrap();
    fs::write(&m, text.replace("\"version\": 1", "\"version\": 2")).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Version { found: 2, expected: 1 })));
    fs::write(&m, text.replace("gstnet-checkpoint", "other")).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Manifest(_))));
    fs::write(&m, text.replace("\"num_classes\": 4", "\"num_classes\": 5")).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Manifest(_))));
    assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn paper_cost_examples() {
    let (code, out, _) = gstnet(&["count", "--backbone", "resnet50", "--block", "gst", "--alpha", "0.25", "--beta", "0.5", "--classes", "174"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    let m = v["mparams"].as_f64().unwrap();
    assert!((m - 21.0).abs() <= 0.15, "{m}");
    assert_eq!(v["formula_mismatches"].as_u64(), Some(0));

    let (code, out, _) = gstnet(&["flops", "--block", "gst", "--alpha", "1/4", "--frames", "8", "--size", "224"]);
    assert_eq!(code, 0);
    let g = serde_json::from_str::<Value>(&out).unwrap()["gmacs"].as_f64().unwrap();
    assert!((g / 29.5 - 1.0).abs() <= 0.03, "{g}");
}

#[test]
fn reports_are_byte_identical_across_runs() {
    for args in [
        &["count", "--backbone", "resnet18", "--block", "p3d"][..],
        &["flops", "--backbone", "resnet18", "--block", "c3d-group", "--format", "csv"],
        &["compare", "--backbone", "resnet18"],
        &["gradcheck", "--block", "gst", "--seed", "3", "--network-blocks", "2", "--max-entries", "4"],
    ] {
        let (c1, a, _) = gstnet(args);
        let (c2, b, _) = gstnet(args);
        assert_eq!((c1, c2), (0, 0), "{args:?}");
        assert!(!a.is_empty());
        assert_eq!(a, b, "{args:?}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(gstnet(&["--help"]).0, 0);
    assert_eq!(gstnet(&["count", "--help"]).0, 0);
    assert_eq!(gstnet(&[]).0, 1);
    assert_eq!(gstnet(&["count", "--no-such-flag"]).0, 1);
    assert_eq!(gstnet(&["count", "--block", "c4d"]).0, 1);
    assert_eq!(gstnet(&["count", "--alpha", "3/2"]).0, 1);
    assert_eq!(gstnet(&["count", "--block", "gst-large", "--beta", "1/2"]).0, 1);
    assert_eq!(gstnet(&["compare", "--blocks", "c2d:3"]).0, 1);
    assert_eq!(gstnet(&["train", "--lr", "0"]).0, 1);
    let (code, _, err) = gstnet(&["analyze", "--checkpoint", "/nonexistent/checkpoint"]);
    assert_eq!(code, 1);
    assert!(err.contains("no checkpoint"), "{err}");
    // an impossible tolerance turns every check into a numerical failure
    let (code, out, err) = gstnet(&["gradcheck", "--block", "c2d", "--tol", "1e-30", "--network-blocks", "1", "--max-entries", "2"]);
    assert_eq!(code, 2);
    assert!(out.contains("\"passed\": false"));
    assert!(err.contains("gradcheck failed"));
}

#[test]
fn gradcheck_p3d_seed_7_passes() {
    let (code, out, _) = gstnet(&["gradcheck", "--block", "p3d", "--seed", "7"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["passed"], Value::Bool(true));
}

#[test]
fn output_paths() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("nested/params.csv");
    let (code, out, _) = gstnet(&["count", "--backbone", "resnet18", "--format", "csv", "--output", file.to_str().unwrap()]);
    assert_eq!((code, out.as_str()), (0, ""));
    let text = fs::read_to_string(&file).unwrap();
    assert!(text.starts_with("layer,kind,params,params_formula,macs\n"));
    assert!(text.lines().last().unwrap().starts_with("total,"));

    let (code, _, _) = gstnet(&["flops", "--backbone", "resnet18", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(dir.path().join("flops.json").is_file());
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_gstnet"))
        .args(["compare", "--backbone", "resnet18", "--format", "csv"])
        .env("GSTNET_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(status.stdout.is_empty());
    let text = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 8);

    let status = Command::new(env!("CARGO_BIN_EXE_gstnet")).args(["count", "--frames", "0"]).output().unwrap();
    assert_eq!(status.status.code(), Some(1));
}

#[test]
fn train_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = |name: &str| dir.path().join(name);
    let train_args = |out: &str| {
        vec![
            "train".to_string(),
            "--epochs".into(),
            "2".into(),
            "--per-class".into(),
            "2".into(),
            "--eval-per-class".into(),
            "2".into(),
            "--milestones".into(),
            "1".into(),
            "--batch-size".into(),
            "4".into(),
            "--seed".into(),
            "9".into(),
            "--output".into(),
            out.into(),
        ]
    };
    let a = run_dir("a");
    let b = run_dir("b");
    for d in [&a, &b] {
        let args = train_args(d.to_str().unwrap());
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, out, err) = gstnet(&argv);
        assert_eq!(code, 0, "{err}");
        assert!(err.contains("wall clock"));
        assert_eq!(out, fs::read_to_string(d.join("summary.json")).unwrap());
    }
    for f in ["summary.json", "history.csv", "checkpoint/manifest.json", "checkpoint/weights.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let history = fs::read_to_string(a.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,lr,train_loss,train_accuracy,eval_accuracy\n"));
    let summary: Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["per_class"].as_array().unwrap().len(), 4);

    let ck = a.join("checkpoint");
    let ck = ck.to_str().unwrap();
    let (code, out, err) = gstnet(&["analyze", "--checkpoint", ck, "--top-k", "2", "--trials", "3"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["clip"], "synthetic:left-to-right");
    assert_eq!(v["trace"]["frames"].as_array().unwrap().len(), 8);
    assert!(!v["attribution"].as_array().unwrap().is_empty());
    assert!(v["last_stage"]["temporal_mean_abs_scale"].as_f64().unwrap() > 0.0);
    assert!(v["shuffle"]["mean_abs_logit_deviation"].as_f64().unwrap() > 0.0);
    let (_, again, _) = gstnet(&["analyze", "--checkpoint", ck, "--top-k", "2", "--trials", "3"]);
    assert_eq!(out, again);

    let (code, csv, _) = gstnet(&["analyze", "--checkpoint", ck, "--format", "csv"]);
    assert_eq!(code, 0);
    assert!(csv.starts_with("layer,bin_left,bin_right,spatial_count,temporal_count\n"));
    assert_eq!(gstnet(&["analyze", "--checkpoint", ck, "--top-k", "5"]).0, 1);
}
