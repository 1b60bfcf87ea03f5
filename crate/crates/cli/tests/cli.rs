use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stigpn");

fn stigpn(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = stigpn(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(dir: &Path, args: &[&str]) -> String {
    let out = stigpn(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

/// Generates a small dataset and trains a checkpoint on it.
fn trained(dir: &Path, config: &str) {
    std::fs::write(dir.join("config.json"), config).unwrap();
    ok(dir, &["synth-gen", "--out", "data.jsonl", "--per-class", "3", "--seed", "2", "--clip-frames", "8"]);
    ok(dir, &["train", "--config", "config.json", "--data", "data.jsonl", "--checkpoint", "ck.json", "--quiet"]);
}

fn first_video_id(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join("data.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    v["video_id"].as_str().unwrap().to_string()
}

#[test]
fn train_eval_export_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d, r#"{"epochs": 2, "frames": 4, "learning_rate": 0.001}"#);

    let csv = std::fs::read_to_string(d.join("ck.loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,lr,total,visual_h,visual_lambda_o,semantic_h,semantic_lambda_o,val_macro_f1")
    );
    assert_eq!(lines.count(), 2);

    let table = ok(d, &["eval", "--checkpoint", "ck.json", "--data", "data.jsonl", "--out", "metrics.json"]);
    assert!(table.contains("sub-activity: macro F1"));
    assert!(table.contains("affordance: macro F1"));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    let f1 = metrics["activity"]["macro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    // same inputs, same outputs
    assert_eq!(ok(d, &["eval", "--checkpoint", "ck.json", "--data", "data.jsonl"]), table);

    let id = first_video_id(d);
    ok(
        d,
        &["export-graph", "--checkpoint", "ck.json", "--data", "data.jsonl", "--video-id", &id, "--out", "graph", "--top-n", "2"],
    );
    let dot = std::fs::read_to_string(d.join("graph.dot")).unwrap();
    graphviz_rust::parse(&dot).unwrap_or_else(|e| panic!("DOT does not parse: {e}\n{dot}"));
    let humans = dot.matches("shape=box").count();
    assert_eq!(humans, 4);
    assert_eq!(dot.matches("style=solid").count(), humans);
    assert_eq!(dot.matches("style=dashed").count(), 2 * humans);
    let graph: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("graph.json")).unwrap()).unwrap();
    let n = graph["T"].as_u64().unwrap() * graph["M"].as_u64().unwrap();
    assert_eq!(graph["A_intra"].as_array().unwrap().len() as u64, n * n);
    assert_eq!(graph["A_inter"].as_array().unwrap().len() as u64, n * n);
}

#[test]
fn single_frame_export_has_no_dashed_edges() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d, r#"{"epochs": 1, "frames": 1}"#);
    let id = first_video_id(d);
    ok(d, &["export-graph", "--checkpoint", "ck.json", "--data", "data.jsonl", "--video-id", &id, "--out", "g"]);
    let dot = std::fs::read_to_string(d.join("g.dot")).unwrap();
    graphviz_rust::parse(&dot).unwrap();
    assert_eq!(dot.matches("style=dashed").count(), 0);
    assert_eq!(dot.matches("style=solid").count(), 1);
}

#[test]
fn zero_lambda_zeroes_object_loss_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d, r#"{"epochs": 2, "frames": 4, "lambda": 0.0}"#);
    let csv = std::fs::read_to_string(d.join("ck.loss.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[4].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cells[6].parse::<f64>().unwrap(), 0.0);
        assert!(cells[3].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn startup_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d, r#"{"epochs": 1, "frames": 3}"#);

    let e = err(d, &["export-graph", "--checkpoint", "ck.json", "--data", "data.jsonl", "--video-id", "missing", "--out", "g"]);
    assert!(e.contains("unknown video_id"), "{e}");

    std::fs::write(d.join("bad.json"), r#"{"epochs": 1, "epoch": 2}"#).unwrap();
    let e = err(d, &["train", "--config", "bad.json", "--data", "data.jsonl", "--checkpoint", "x.json"]);
    assert!(e.contains("unknown field"), "{e}");

    let e = err(d, &["train", "--data", "absent.jsonl", "--checkpoint", "x.json"]);
    assert!(e.contains("absent.jsonl"), "{e}");

    let e = err(d, &["train", "--data", "data.jsonl", "--checkpoint", "x.json", "--ablation", "intra-only,dense-baseline"]);
    assert!(e.contains("contradictory"), "{e}");

    let e = err(d, &["train", "--data", "data.jsonl", "--checkpoint", "x.json", "--ablation", "sideways"]);
    assert!(e.contains("unknown ablation"), "{e}");

    // a dataset with more activity classes than the checkpoint was built for
    std::fs::write(d.join("two.json"), r#"{"epochs": 1, "frames": 3, "activities": 2}"#).unwrap();
    ok(d, &["synth-gen", "--out", "two.jsonl", "--task", "ordering", "--per-class", "3"]);
    ok(d, &["train", "--config", "two.json", "--data", "two.jsonl", "--checkpoint", "two_ck.json", "--quiet"]);
    let e = err(d, &["eval", "--checkpoint", "two_ck.json", "--data", "data.jsonl"]);
    assert!(e.contains("class-count mismatch"), "{e}");
}

#[test]
fn synth_gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth-gen", "--out", "a.jsonl", "--per-class", "2", "--seed", "9"]);
    ok(d, &["synth-gen", "--out", "b.jsonl", "--per-class", "2", "--seed", "9"]);
    ok(d, &["synth-gen", "--out", "c.jsonl", "--per-class", "2", "--seed", "10"]);
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
    assert_eq!(String::from_utf8(read("a.jsonl")).unwrap().lines().count(), 8);
}
