use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn aware(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aware")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = aware(args);
    assert!(out.status.success(), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small dataset, manifest, model and index shared by the pipeline tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        ok(&["synth", "--out", p(&f.path("data.csv")), "--rows", "400", "--noise", "10", "--ir", "3", "--seed", "1"]);
        ok(&["synth", "--out", p(&f.path("queries.csv")), "--rows", "50", "--noise", "10", "--ir", "3", "--seed", "2"]);
        ok(&[
            "train-encoder",
            "--data",
            p(&f.path("data.csv")),
            "--manifest",
            p(&f.path("data.manifest.json")),
            "--out",
            p(&f.path("model.json")),
            "--epochs",
            "3",
            "--ensemble-k",
            "2",
        ]);
        ok(&[
            "build-index",
            "--data",
            p(&f.path("data.csv")),
            "--manifest",
            p(&f.path("data.manifest.json")),
            "--model",
            p(&f.path("model.json")),
            "--out",
            p(&f.path("index.json")),
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn predict(&self, out: &str, extra: &[&str]) -> Vec<Vec<f64>> {
        let (model, index) = (self.path("model.json"), self.path("index.json"));
        let (queries, manifest) = (self.path("queries.csv"), self.path("queries.manifest.json"));
        let mut args = vec![
            "predict",
            "--model",
            p(&model),
            "--index",
            p(&index),
            "--queries",
            p(&queries),
            "--manifest",
            p(&manifest),
            "--k",
            "64",
        ];
        let out = self.path(out);
        args.extend(["--out", p(&out)]);
        args.extend(extra);
        ok(&args);
        let mut r = csv::Reader::from_path(&out).unwrap();
        assert_eq!(r.headers().unwrap(), vec!["row_id", "p_0", "p_1"]);
        r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect()
    }
}

#[test]
fn predictions_are_distributions_one_per_query() {
    let f = Fixture::new();
    let rows = f.predict("scores.csv", &[]);
    assert_eq!(rows.len(), 50);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i as f64);
        assert!((r[1] + r[2] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn identity_adapter_file_equals_no_adapter() {
    let f = Fixture::new();
    let m = 32;
    let a: Vec<f64> = (0..m * m).map(|i| if i % (m + 1) == 0 { 1.0 } else { 0.0 }).collect();
    let file = serde_json::json!({ "format_version": 1, "m": m, "a": a, "bias": vec![0.0; m] });
    fs::write(f.path("identity.json"), file.to_string()).unwrap();
    f.predict("plain.csv", &[]);
    f.predict("adapted.csv", &["--adapter", p(&f.path("identity.json"))]);
    assert_eq!(fs::read(f.path("plain.csv")).unwrap(), fs::read(f.path("adapted.csv")).unwrap());
}

#[test]
fn external_backbone_matches_the_built_in_vote() {
    let f = Fixture::new();
    let exe = env!("CARGO_BIN_EXE_aware");
    f.predict("inproc.csv", &[]);
    f.predict("external.csv", &["--backbone-cmd", exe, "--backbone-arg", "serve-backbone"]);
    let a = fs::read_to_string(f.path("inproc.csv")).unwrap();
    let b = fs::read_to_string(f.path("external.csv")).unwrap();
    let parse = |s: &str| -> Vec<f64> {
        s.lines()
            .skip(1)
            .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect()
    };
    for (x, y) in parse(&a).iter().zip(parse(&b)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn adapter_training_writes_a_loadable_file() {
    let f = Fixture::new();
    let out = ok(&[
        "train-adapter",
        "--index",
        p(&f.path("index.json")),
        "--out",
        p(&f.path("adapter.json")),
        "--epochs",
        "1",
        "--context-size",
        "32",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("prompt NLL per epoch"));
    let rows = f.predict("adapted.csv", &["--adapter", p(&f.path("adapter.json"))]);
    assert_eq!(rows.len(), 50);
    let inspected = ok(&["inspect", p(&f.path("adapter.json"))]);
    assert!(String::from_utf8_lossy(&inspected.stdout).contains("\"adapter\""));
}

#[test]
fn same_seed_gives_identical_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", p(&d.join("data.csv")), "--rows", "400", "--noise", "5"]);
    for name in ["a.json", "b.json"] {
        ok(&[
            "train-encoder",
            "--data",
            p(&d.join("data.csv")),
            "--manifest",
            p(&d.join("data.manifest.json")),
            "--out",
            p(&d.join(name)),
            "--epochs",
            "2",
            "--ensemble-k",
            "2",
            "--seed",
            "7",
        ]);
    }
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
}

#[test]
fn missing_label_column_is_a_usage_error_naming_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", p(&d.join("data.csv")), "--rows", "100", "--noise", "2"]);
    fs::write(d.join("bad.json"), r#"{"label_column": "outcome", "task": "binary"}"#).unwrap();
    let out = aware(&[
        "train-encoder",
        "--data",
        p(&d.join("data.csv")),
        "--manifest",
        p(&d.join("bad.json")),
        "--out",
        p(&d.join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("outcome"));
    assert!(!d.join("m.json").exists());
}

#[test]
fn model_and_data_shape_mismatch_exits_3() {
    let f = Fixture::new();
    // Queries with fewer columns than the model was trained on.
    ok(&["synth", "--out", p(&f.path("narrow.csv")), "--rows", "20", "--noise", "3"]);
    let out = aware(&[
        "predict",
        "--model",
        p(&f.path("model.json")),
        "--index",
        p(&f.path("index.json")),
        "--queries",
        p(&f.path("narrow.csv")),
        "--manifest",
        p(&f.path("narrow.manifest.json")),
        "--out",
        p(&f.path("s.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data.csv");
    ok(&["synth", "--out", p(&out), "--rows", "50", "--noise", "1"]);
    assert_eq!(aware(&["synth", "--out", p(&out), "--rows", "50", "--noise", "1"]).status.code(), Some(2));
    ok(&["synth", "--out", p(&out), "--rows", "50", "--noise", "1", "--force"]);
}

fn stress_args<'a>(dir: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["stress", "--out", dir, "--seeds", "0", "--variants", "baseline_raw_knn", "--train-size", "501"];
    v.extend(extra);
    v
}

#[test]
fn rarity_rows_follow_the_requested_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    ok(&stress_args(p(&out), &["--protocol", "rarity", "--ir", "5,50,500"]));
    let mut r = csv::Reader::from_path(out.join("rows.csv")).unwrap();
    let mut seen: Vec<String> = r.records().map(|rec| rec.unwrap()[1].to_string()).collect();
    seen.dedup();
    assert_eq!(seen, vec!["5", "50", "500"]);
    assert!(!out.join("timings.csv").exists());
    for f in ["aggregates.csv", "provenance.json", "summary.txt", "failures.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn invalid_protocol_lists_the_choices() {
    let out = aware(&["stress", "--protocol", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["data_scale", "heterogeneity", "rarity", "ablation", "single"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn non_empty_report_directory_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let args = stress_args(p(dir.path()), &["--protocol", "rarity", "--ir", "5"]);
    assert_eq!(aware(&args).status.code(), Some(2));
    assert!(!dir.path().join("rows.csv").exists());
    let mut forced = args.clone();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn partial_failures_exit_4_and_keep_completed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    // Ten folds cannot be drawn from 5 positive training rows.
    let code = aware(&[
        "stress",
        "--out",
        p(&out),
        "--protocol",
        "rarity",
        "--ir",
        "100",
        "--train-size",
        "505",
        "--seeds",
        "0",
        "--variants",
        "baseline_raw_knn,+ensemble",
        "--ensemble-k",
        "10",
        "--epochs",
        "1",
    ])
    .status
    .code();
    assert_eq!(code, Some(4));
    let rows = fs::read_to_string(out.join("rows.csv")).unwrap();
    assert!(rows.contains("baseline_raw_knn"));
    assert!(!rows.contains("+ensemble"));
    assert!(fs::read_to_string(out.join("failures.json")).unwrap().contains("+ensemble"));
}

#[test]
fn help_lists_the_defaults() {
    let text = |args: &[&str]| String::from_utf8(ok(args).stdout).unwrap();
    let train = text(&["train-encoder", "--help"]);
    for needle in ["[default: 50]", "[default: 0.001]", "[default: 5]", "[default: 128]", "[default: 0]"] {
        assert!(train.contains(needle), "{needle}\n{train}");
    }
    let adapter = text(&["train-adapter", "--help"]);
    for needle in ["[default: 5]", "[default: 0.0001]", "[default: 1024]", "[default: 3000]"] {
        assert!(adapter.contains(needle), "{needle}\n{adapter}");
    }
    assert!(text(&["predict", "--help"]).contains("[default: 1024]"));
    assert!(text(&["stress", "--help"]).contains("[default: 1024]"));
}
