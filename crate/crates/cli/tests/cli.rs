use std::path::Path;
use std::process::{Command, Output};

use beattrio_cli::files::{parse_decoded, parse_labels, parse_trace, Threshold};
use beattrio_core::evaluate::MccvReport;
use beattrio_core::BeatClass;

const FAST: &[&str] = &["--atoms", "301", "--sparsity", "4", "--ksvd-iterations", "4", "--minutes", "0.25"];

fn beattrio(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beattrio"))
        .current_dir(dir)
        .env("BEATTRIO_WORKERS", "2")
        .args(args)
        .output()
        .expect("spawn beattrio")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = beattrio(dir, args);
    assert!(
        out.status.success(),
        "beattrio {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")))
        .unwrap_or_else(|| panic!("no {key:?} in {stdout}"))
}

fn synth(dir: &Path, records: usize, beats: usize, extra: &[&str]) {
    let (r, b) = (records.to_string(), beats.to_string());
    let mut args = vec!["synth", "--seed", "3", "--n-records", &r, "--beats", &b];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), 2, 60, &[]);
    synth(b.path(), 2, 60, &[]);
    let mut names: Vec<_> = std::fs::read_dir(a.path().join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for n in names {
        let x = std::fs::read(a.path().join("data").join(&n)).unwrap();
        let y = std::fs::read(b.path().join("data").join(&n)).unwrap();
        assert_eq!(x, y, "{n:?}");
    }
}

#[test]
fn simulate_label_script() {
    let dir = tempfile::tempdir().unwrap();
    let trace = parse_trace(&ok(dir.path(), &["simulate", "--labels", "NNVNN"])).unwrap();
    let flags: Vec<bool> = trace.iter().map(|r| r.flag).collect();
    assert_eq!(flags, [false, true, true, true, false]);
    assert!(trace.iter().all(|r| r.transmitted == r.flag));

    let out = ok(dir.path(), &["simulate", "--labels", "NVNNNNVVN"]);
    let flags: Vec<u8> = parse_trace(&out).unwrap().iter().map(|r| r.flag as u8).collect();
    assert_eq!(flags, [1, 1, 1, 0, 0, 1, 1, 1, 1]);
    assert_eq!(field(&out, "# transmitted_beats"), "7");
}

#[test]
fn bandwidth_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["bandwidth", "--csv", "--hours", "2"]);
    let rows: Vec<Vec<f64>> = out
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let raw_bytes = 360.0 * 11.0 * 7200.0 / 8.0;
    let (se, sp, rho) = (0.99, 0.953, 0.1);
    let expected = [
        1.0,
        3.0 * (se * rho + (1.0 - sp) * (1.0 - rho)),
        rho / 50.8 + (1.0 - rho) / 49.7,
    ];
    for (row, b) in rows.iter().zip(expected) {
        assert!((row[0] - b).abs() < 1e-12, "{row:?} vs {b}");
        assert!((row[1] - b * raw_bytes).abs() < 1e-6);
        assert!((row[2] - b * raw_bytes / 1000.0 / 100.0 * 1.5).abs() < 1e-9);
    }
    assert!(rows[3][0] < rows[2][0]);
}

#[test]
fn train_compress_decode_classify() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 4, 150, &[]);
    std::fs::write(
        d.join("run.toml"),
        "[pipeline]\nprd_compr = 0.09\nprd_int = 0.088\n",
    )
    .unwrap();
    let cfg = ["--config", "run.toml"];
    let with = |args: &[&str]| -> Vec<String> {
        cfg.iter().chain(FAST).chain(args).map(|s| s.to_string()).collect()
    };
    let run = |args: &[&str]| {
        let v = with(args);
        ok(d, &v.iter().map(String::as_str).collect::<Vec<_>>())
    };

    run(&["train"]);
    let threshold: Threshold = serde_json::from_str(&std::fs::read_to_string(d.join("out/classifier.json")).unwrap()).unwrap();
    assert!(threshold.tau >= 0.0);
    assert!(d.join("out/d_normal.csv").exists() && d.join("out/calibration_roc.csv").exists());

    let c = run(&["compress", "--record", "101", "--truth-labels"]);
    assert_eq!(field(&c, "lossless"), "true");
    let mean: f64 = field(&c, "mean_prd").parse().unwrap();
    assert!(mean <= 0.09, "{mean}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/101.btr.json")).unwrap()).unwrap();
    assert_eq!(report["bits"].to_string(), field(&c, "bits"));

    let dec = run(&["decode", "--stream", "out/101.btr", "--reference"]);
    assert_eq!(field(&dec, "record"), "101");
    assert_eq!(field(&dec, "beats"), field(&c, "beats"));
    assert_eq!(field(&dec, "bits"), field(&c, "bits"));
    assert_eq!(field(&dec, "mean_prd"), field(&c, "mean_prd"));
    let rows = parse_decoded(&std::fs::read_to_string(d.join("out/101.decoded.csv")).unwrap()).unwrap();
    assert_eq!(rows.len().to_string(), field(&c, "beats"));
    assert!(rows.iter().all(|r| r.samples.len() == 301));
    assert!(rows.windows(2).all(|w| w[0].timestamp < w[1].timestamp));

    run(&["classify", "--ids", "100,101"]);
    let labels = parse_labels(&std::fs::read_to_string(d.join("out/labels.csv")).unwrap()).unwrap();
    assert!(labels.iter().any(|r| r.record == "100") && labels.iter().any(|r| r.record == "101"));
    let roc = beattrio_core::evaluate::parse_roc_csv(&std::fs::read_to_string(d.join("out/roc.csv")).unwrap()).unwrap();
    assert!(!roc.is_empty());

    let sim = run(&["simulate", "--record", "101", "--labels-file", "out/labels.csv"]);
    let trace = parse_trace(&sim).unwrap();
    assert_eq!(trace.len(), rows.len());
    let flagged = trace.iter().filter(|r| r.flag).count();
    assert_eq!(field(&sim, "# transmitted_beats"), flagged.to_string());

    run(&["classify", "--ids", "100", "--tau", "0"]);
    let labels = parse_labels(&std::fs::read_to_string(d.join("out/labels.csv")).unwrap()).unwrap();
    assert!(labels.iter().all(|r| r.predicted == BeatClass::Normal));
}

#[test]
fn mccv_writes_readable_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 8, 120, &["--pvc-rate", "0.15"]);
    let mut args = FAST.to_vec();
    args.extend_from_slice(&["eval", "--proposal", "2", "--iterations", "2", "--seed", "5"]);
    let out = ok(d, &args);
    assert!(out.contains("over 2 iterations"));
    let report = MccvReport::from_jsonl(&std::fs::read_to_string(d.join("out/mccv.jsonl")).unwrap(), 2, 5).unwrap();
    assert_eq!(report.proposal, 2);
    assert_eq!(report.iterations.len(), 2);
    assert_eq!(report.summary_csv(), std::fs::read_to_string(d.join("out/mccv_summary.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| beattrio(d, args).status.code();

    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["synth", "--pvc-rate", "1.5"]), Some(2));
    assert_eq!(code(&["simulate", "--labels", "NQV"]), Some(2));
    assert_eq!(code(&["--prd-class", "-1", "bandwidth"]), Some(2));

    assert_eq!(code(&["classify"]), Some(3));
    synth(d, 6, 60, &["--pvc-rate", "0"]);
    let mut train = FAST.to_vec();
    train.push("train");
    assert_eq!(code(&train), Some(3));

    let mut eval = FAST.to_vec();
    eval.extend_from_slice(&["eval", "--proposal", "3", "--iterations", "1"]);
    assert_eq!(code(&eval), Some(4));
}
