use std::path::Path;
use std::process::{Command, Output};

fn dermabench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dermabench"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn train_then_report_compare_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "dataset": {"name": "synthetic", "resolution": 8, "expected_counts": {"exact": [70, 14, 21]}},
        "model": "SM",
        "train": {"max_epochs": 2, "batch_size": 16},
        "seed": 4
    }"#;
    std::fs::write(dir.path().join("exp.json"), config).unwrap();
    let out = stdout(&dermabench(&["train", "--config", "exp.json", "--input-side", "8", "--out", "runs"], dir.path()));
    assert!(out.contains("completed"), "{out}");
    assert!(out.contains("threshold_micro") && out.contains("argmax_macro"), "{out}");

    let report = stdout(&dermabench(&["report", "runs"], dir.path()));
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "Results - synthetic 8x8x3");
    assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["Loss", "ACC", "Precision", "AUC", "Recall"]);
    assert!(lines[2].starts_with("SM"));

    // a second invocation from disk is byte-identical
    assert_eq!(stdout(&dermabench(&["report", "runs"], dir.path())), report);

    let csv = stdout(&dermabench(&["report", "runs", "--format", "csv", "--mode", "argmax_macro"], dir.path()));
    assert!(csv.starts_with("model,loss,acc,precision,auc,recall\nSM,"), "{csv}");

    let compare = stdout(&dermabench(&["compare", "runs"], dir.path()));
    assert_eq!(compare.lines().count(), 2 + 9 + 1);
    assert!(compare.lines().last().unwrap().contains("this work (SM)"));

    let run_dir = std::fs::read_dir(dir.path().join("runs")).unwrap().next().unwrap().unwrap().path();
    let eval = stdout(&dermabench(&["evaluate", run_dir.to_str().unwrap()], dir.path()));
    let diff: f64 = eval
        .lines()
        .find(|l| l.starts_with("difference"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!(diff <= 1e-5, "{eval}");
}

#[test]
fn flags_build_a_spec_without_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = dermabench(&["train", "--dataset", "DermaMNIST", "--model", "SM", "--out", "r"], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    // no archive in the default cache: the load stage fails and says so
    assert!(err.contains("load") && err.contains("archive not found"), "{err}");
    assert!(std::fs::read_dir(dir.path().join("r")).unwrap().count() == 1);
}

#[test]
fn unknown_names_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = dermabench(&["train", "--dataset", "DermaMNIST", "--model", "VGG"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("VGG"));
    let o = dermabench(&["train", "--model", "SM"], dir.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--dataset"));
}

#[test]
fn download_requires_exactly_one_target() {
    let dir = tempfile::tempdir().unwrap();
    let o = dermabench(&["download-data", "--base-url", "https://example.invalid"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("exactly one"));
}
