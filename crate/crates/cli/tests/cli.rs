use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trafficlens"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic features and a quickly trained model in a fresh directory.
fn trained(extra_extract: &[&str]) -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let features = dir.path().join("features.csv");
    let model = dir.path().join("model.json");
    let mut args = vec![
        "extract",
        "--synth",
        "40",
        "--seed",
        "3",
        "-o",
        p(&features),
    ];
    args.extend_from_slice(extra_extract);
    ok(&args);
    ok(&[
        "train",
        p(&features),
        "-o",
        p(&model),
        "--episodes",
        "100",
        "--queries",
        "64",
    ]);
    (dir, features, model)
}

#[test]
fn synth_extract_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let caps = dir.path().join("caps");
    ok(&[
        "synth",
        "--out-dir",
        p(&caps),
        "--duration",
        "300",
        "--seed",
        "1",
    ]);
    let pcaps: Vec<_> = fs::read_dir(&caps)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(pcaps.len(), 5);

    let features = dir.path().join("f.csv");
    let printed = ok(&["extract", p(&caps), "-o", p(&features), "--require-labels"]);
    assert!(printed.contains("windows ->"));
    for label in ["STREAMING", "VOIP", "CHAT", "C2", "FILE_TRANSFER"] {
        assert!(printed.contains(label), "{label} missing from:\n{printed}");
    }
    let header = fs::read_to_string(&features).unwrap();
    let columns = header.lines().nth(1).unwrap().split(',').count();
    assert_eq!(columns, 130, "129 features plus the label");

    let model = dir.path().join("m.json");
    ok(&[
        "train",
        p(&features),
        "-o",
        p(&model),
        "--episodes",
        "100",
        "--queries",
        "64",
    ]);
    let report = dir.path().join("report.txt");
    let text = ok(&["eval", p(&model), p(&features), "-o", p(&report)]);
    assert!(text.contains("micro-F1"));
    let kv = fs::read_to_string(&report).unwrap();
    let parsed = trafficlens::evalkit::EvalReport::parse(&kv).unwrap();
    assert_eq!(parsed.to_kv(), kv);
    assert_eq!(parsed.classes().len(), 5);
    assert!(parsed.ood.is_some());

    let pred = ok(&["predict", p(&model), p(&features)]);
    assert!(pred.starts_with("window\tpredicted\tconfidence\tood_score\tchi2_score\tlabel"));
    assert!(pred.contains("# ood_threshold=0.95"));
    let ood = ok(&[
        "ood-report",
        p(&model),
        p(&features),
        "--ood-threshold",
        "0.5",
    ]);
    let scores: Vec<f64> = ood
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(
        scores.windows(2).all(|w| w[0] >= w[1]),
        "not sorted by score"
    );
    assert!(ood.contains("# ood_threshold=0.5"));
}

#[test]
fn same_seed_same_model_bytes() {
    let (dir, features, model) = trained(&[]);
    let again = dir.path().join("again.json");
    ok(&[
        "train",
        p(&features),
        "-o",
        p(&again),
        "--episodes",
        "100",
        "--queries",
        "64",
    ]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());
    let other = dir.path().join("other.json");
    ok(&[
        "train",
        p(&features),
        "-o",
        p(&other),
        "--episodes",
        "100",
        "--queries",
        "64",
        "--seed",
        "1",
    ]);
    assert_ne!(fs::read(&model).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn single_class_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let features = dir.path().join("one.csv");
    ok(&[
        "extract",
        "--synth",
        "30",
        "--profiles",
        "voip",
        "-o",
        p(&features),
    ]);
    let out = run(&[
        "train",
        p(&features),
        "-o",
        p(&dir.path().join("m.json")),
        "--episodes",
        "10",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("at least 2 classes") && err.contains("VOIP"),
        "{err}"
    );
}

#[test]
fn unlabeled_files_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let caps = dir.path().join("caps");
    ok(&[
        "synth",
        "--out-dir",
        p(&caps),
        "--duration",
        "60",
        "--profiles",
        "chat,voip",
    ]);
    let renamed = caps.join("mystery_capture.pcap");
    fs::rename(caps.join("synth_chat.pcap"), &renamed).unwrap();
    let out = run(&[
        "extract",
        p(&caps),
        "-o",
        p(&dir.path().join("f.csv")),
        "--require-labels",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mystery_capture.pcap"), "{err}");
    assert!(!err.contains("synth_voip.pcap"), "{err}");
    // Without the flag the file is kept, unlabeled.
    let printed = ok(&["extract", p(&caps), "-o", p(&dir.path().join("f.csv"))]);
    assert!(printed.contains("(unlabeled)"));
}

#[test]
fn mismatched_features_fail_before_scoring() {
    let (dir, features, model) = trained(&[]);
    let text = fs::read_to_string(&features).unwrap();
    let hash = trafficlens::features::feature_order_hash();
    let tampered = dir.path().join("tampered.csv");
    fs::write(
        &tampered,
        text.replacen(&format!("order={hash}"), "order=ffffffffffffffff", 1),
    )
    .unwrap();
    let out = run(&["predict", p(&model), p(&tampered)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty(), "scores were written");

    let coarse = dir.path().join("coarse.csv");
    ok(&[
        "extract",
        "--synth",
        "20",
        "--bin-seconds",
        "0.02",
        "--window-seconds",
        "81.92",
        "-o",
        p(&coarse),
    ]);
    let out = run(&["predict", p(&model), p(&coarse)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extraction settings"));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(
        run(&["train", "/nonexistent/f.csv", "-o", "/tmp/x.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&[
            "extract",
            "--synth",
            "5",
            "--window-seconds",
            "30",
            "-o",
            "/tmp/never.csv"
        ])
        .status
        .code(),
        Some(1)
    );
    // 2048 bins cannot hold 13 wavelet bands.
    assert_eq!(
        run(&[
            "extract",
            "--synth",
            "5",
            "--bin-seconds",
            "0.02",
            "-o",
            "/tmp/never.csv"
        ])
        .status
        .code(),
        Some(1)
    );
    let out = bin()
        .env("TRAFFICLENS_THREADS", "zero")
        .args(["extract", "--synth", "5", "-o", "/tmp/never.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn masked_sizes_are_recorded_and_enforced() {
    let (dir, masked, model) = trained(&["--mask-sizes", "1500"]);
    let table = trafficlens::dataset::FeatureTable::load(&masked).unwrap();
    assert_eq!(table.extraction.mask_sizes, Some(1500));
    // Every packet carries 1500 bytes, so byte totals are multiples of it.
    for row in &table.rows {
        let bytes_forward = row.as_slice()[3];
        assert_eq!(bytes_forward % 1500.0, 0.0);
    }
    let plain = dir.path().join("plain.csv");
    ok(&["extract", "--synth", "20", "--seed", "3", "-o", p(&plain)]);
    let out = run(&["eval", p(&model), p(&plain)]);
    assert_eq!(out.status.code(), Some(2));
    ok(&["eval", p(&model), p(&masked)]);
}
