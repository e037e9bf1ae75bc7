use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fbnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbnet"))
        .args(args)
        .env("FBN_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_DATA: &[&str] = &["--override", "n=24", "--override", "v=12", "--override", "t=32"];

const SMALL_RUN: &[&str] = &[
    "--override",
    "encoder.cnn_channels=[2,2,2]",
    "--override",
    "encoder.cnn_kernel=4",
    "--override",
    "encoder.mlp_hidden=4",
    "--override",
    "train.epochs=2",
    "--override",
    "cv.folds=2",
    "--override",
    "cv.repetitions=1",
];

fn gen(dir: &Path) {
    let mut args = vec!["gen-data", "--out", path(dir)];
    args.extend_from_slice(SMALL_DATA);
    let out = fbnet(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn train(data: &Path, run: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", path(data), "--out", path(run)];
    args.extend_from_slice(SMALL_RUN);
    args.extend_from_slice(extra);
    fbnet(&args)
}

#[test]
fn golden_path() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("d"), tmp.path().join("r"));
    gen(&data);
    assert!(data.join("manifest.json").exists());
    let out = train(&data, &run, &["--override", "train.lr=0.0005"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "metrics.csv", "summary.json", "graphs/labels.csv", "graphs/sample_0.csv", "model/manifest.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["train.lr"], serde_json::json!(0.0005));
    assert_eq!(config["cv.folds"], serde_json::json!(2));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);

    let out = fbnet(&["analyze", "--run", path(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["heatmap_all.csv", "heatmap_class_class0.csv", "heatmap_class_class1.csv", "tstats.csv", "pvalues.csv", "module_scores.csv"] {
        assert!(run.join("analysis").join(f).exists(), "missing {f}");
    }
    let scores = fs::read_to_string(run.join("analysis/module_scores.csv")).unwrap();
    assert_eq!(scores.lines().next(), Some("module,size,T_u,rank"));
    assert_eq!(scores.lines().count(), 4);
}

#[test]
fn repeated_train_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(train(&data, &a, &["--seed", "11"]).status.success());
    assert!(train(&data, &b, &["--seed", "11"]).status.success());
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn ablate_writes_four_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("d"), tmp.path().join("abl"));
    gen(&data);
    let mut args = vec!["ablate", "--data", path(&data), "--out", path(&out)];
    args.extend_from_slice(SMALL_RUN);
    let res = fbnet(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, vec!["ce", "ce+gl", "ce+sl", "full"]);
    assert!(table.contains("ce,0,0,0,"));
    assert!(table.contains("full,0.001,0.001,0.0001,"));
    for d in ["ce", "ce_gl", "ce_sl", "full"] {
        assert!(out.join(d).join("metrics.csv").exists());
    }
}

#[test]
fn compare_graphs_writes_three_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("d"), tmp.path().join("cmp"));
    gen(&data);
    let mut args = vec!["compare-graphs", "--data", path(&data), "--out", path(&out)];
    args.extend_from_slice(SMALL_RUN);
    let res = fbnet(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, vec!["learnable", "pearson", "uniform"]);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = fbnet(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn conflicting_overrides_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fbnet(&["gen-data", "--out", path(tmp.path()), "--override", "n=10", "--override", "n=12"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conflicting"));
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fbnet(&["gen-data", "--out", path(tmp.path()), "--override", "nope=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_cohort_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train(&tmp.path().join("absent"), &tmp.path().join("r"), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(tmp.path().join("r/config.json").exists());
}

#[test]
fn selftest_passes() {
    let out = fbnet(&["selftest"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("pass ")));
    assert!(stdout.contains("end_to_end_gru"));
}
