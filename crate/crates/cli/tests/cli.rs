use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CHAIN2: &str = r#"{
  "name": "chain2",
  "sites": [
    {"name": "X0", "kind": "categorical", "arity": 2, "parents": [],
     "dist": {"type": "categorical_table", "rows": [[0.7, 0.3]]}},
    {"name": "X1", "kind": "categorical", "arity": 2, "parents": ["X0"],
     "dist": {"type": "categorical_table", "rows": [[0.8, 0.2], [0.1, 0.9]]}}
  ]
}"#;

const GAUSS: &str = r#"{
  "name": "gauss",
  "sites": [
    {"name": "m", "kind": "continuous", "parents": [],
     "dist": {"type": "gaussian_const", "mean": 1.0, "std": 2.0}},
    {"name": "x", "kind": "continuous", "parents": ["m"],
     "dist": {"type": "gaussian_linear", "mean_parent": "m", "std": 1.0}}
  ]
}"#;

fn um(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_um"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("run um")
}

fn ok(args: &[&str]) -> String {
    let out = um(args);
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

fn json(s: &str) -> serde_json::Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn gen_graph_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["gen-graph", "chain", "4", "--seed", "7", "-o", p(&a)]);
    ok(&["gen-graph", "chain", "4", "--seed", "7", "-o", p(&b)]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(json(&text)["sites"].as_array().unwrap().len(), 4);
    let pp = json(&ok(&["gen-graph", "probprog"]));
    assert_eq!(pp["sites"].as_array().unwrap().len(), 52);
    assert_eq!(
        json(&ok(&["gen-graph", "grid16"]))["sites"]
            .as_array()
            .unwrap()
            .len(),
        16
    );
    assert_eq!(um(&["gen-graph", "ring", "4"]).status.code(), Some(2));
    assert_eq!(um(&["gen-graph", "chain", "1"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(um(&["train"]).status.code(), Some(2));
    assert_eq!(um(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn oracle_queries() {
    let dir = tempfile::tempdir().unwrap();
    let prog = dir.path().join("chain2.json");
    fs::write(&prog, CHAIN2).unwrap();
    let out = json(&ok(&[
        "oracle",
        p(&prog),
        "--evidence",
        r#"{"X1": 1}"#,
        "--format",
        "json",
    ]));
    let x0 = out["marginals"]["X0"].as_array().unwrap();
    assert!((x0[1].as_f64().unwrap() - 0.65854).abs() < 1e-5);
    let table = ok(&["oracle", p(&prog), "--evidence", r#"{"X1": 1}"#]);
    assert!(table.contains("X0") && table.contains("0.65854"), "{table}");
    let missing = um(&["oracle", p(&prog), "--evidence", r#"{"X9": 1}"#]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("X9"));
    assert_eq!(
        um(&["oracle", p(&prog), "--evidence", r#"{"X1": 2}"#])
            .status
            .code(),
        Some(3)
    );
    let g = dir.path().join("gauss.json");
    fs::write(&g, GAUSS).unwrap();
    assert_eq!(um(&["oracle", p(&g)]).status.code(), Some(3));
    assert_eq!(um(&["oracle", "/nonexistent.json"]).status.code(), Some(3));
}

#[test]
fn train_then_infer_chain2() {
    let dir = tempfile::tempdir().unwrap();
    let prog = dir.path().join("chain2.json");
    fs::write(&prog, CHAIN2).unwrap();
    let ck = dir.path().join("m.json");
    let out = ok(&[
        "train",
        p(&prog),
        "-o",
        p(&ck),
        "--mode",
        "flex",
        "--preset",
        "2",
        "--iters",
        "1500",
        "--seed",
        "3",
    ]);
    assert!(out.starts_with("final summed loss"));
    let saved = json(&fs::read_to_string(&ck).unwrap());
    assert_eq!(saved["mode"], "flexible");
    assert_eq!(saved["preset"], 2);
    assert!(dir.path().join("m.json.loss.csv").exists());
    assert!(dir.path().join("m.json.loss.summed.csv").exists());

    let all = ok(&[
        "infer",
        p(&ck),
        "--evidence",
        r#"{"X0": 0, "X1": 1}"#,
        "--format",
        "json",
    ]);
    assert_eq!(json(&all)["marginals"], serde_json::json!({}));

    let guided = json(&ok(&[
        "infer",
        p(&ck),
        "--evidence",
        r#"{"X1": 1}"#,
        "--method",
        "guide-is",
        "-n",
        "100000",
        "--format",
        "json",
    ]));
    let x0 = guided["marginals"]["X0"][1].as_f64().unwrap();
    assert!((x0 - 0.6585).abs() < 0.02, "{x0}");
    assert!(guided["ess"].as_f64().unwrap() > 1000.0);
    assert_eq!(guided["proposal"], "um-guide");

    let bad = um(&["infer", p(&ck), "--evidence", r#"{"nope": 1}"#]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nope"));
    assert_eq!(
        um(&["infer", p(&ck), "--evidence", "{not json"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn evidence_file_and_continuous_programs() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("gauss.json");
    fs::write(&g, GAUSS).unwrap();
    let ck = dir.path().join("g.ckpt");
    ok(&[
        "train",
        p(&g),
        "-o",
        p(&ck),
        "--iters",
        "300",
        "--hidden",
        "2",
        "--width",
        "16",
    ]);
    let ev = dir.path().join("ev.json");
    fs::write(&ev, r#"{"x": 3.0}"#).unwrap();
    let out = json(&ok(&[
        "infer",
        p(&ck),
        "--evidence-file",
        p(&ev),
        "--format",
        "json",
    ]));
    assert!(out["marginals"]["m"]["mean"].as_f64().unwrap().is_finite());
    let out = json(&ok(&[
        "infer",
        p(&ck),
        "--evidence-file",
        p(&ev),
        "--method",
        "prior-is",
        "-n",
        "50000",
        "--format",
        "json",
    ]));
    // conjugate posterior mean: 1 + 4/5 * (3 - 1)
    let m = out["marginals"]["m"]["mean"].as_f64().unwrap();
    assert!((m - 2.6).abs() < 0.05, "{m}");
}

#[test]
fn small_benchmark_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = |out: &Path| {
        vec![
            "benchmark".to_string(),
            "--graphs".into(),
            "chain4,star4".into(),
            "--presets".into(),
            "2".into(),
            "--modes".into(),
            "standard,flex".into(),
            "--iters".into(),
            "50".into(),
            "--batch".into(),
            "64".into(),
            "--queries".into(),
            "20".into(),
            "-o".into(),
            out.to_str().unwrap().to_string(),
        ]
    };
    let run = |out: &Path| {
        let a = args(out);
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    };
    run(&a);
    run(&b);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "graph,mode,preset,seed,correlation_cat,correlation_cont,iters,batch,seconds"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("chain4,standard,2,0,"));
}
