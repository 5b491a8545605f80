use std::path::Path;
use std::process::{Command, Output};

const XML: &str = r#"<Annotation><DocumentSet><Document id="d1"><DocumentPart>
<sentence id="S1">It <xcope id="X1"><cue type="speculation" ref="X1">might</cue> rain tomorrow</xcope>.</sentence>
<sentence id="S2">The gene is expressed in liver.</sentence>
<sentence id="S3">These data <xcope id="X2"><cue type="speculation" ref="X2">suggest</cue> that the protein binds</xcope>.</sentence>
<sentence id="S4">Cells <xcope id="X3"><cue type="speculation" ref="X3">may</cue> grow</xcope>.</sentence>
<sentence id="S5">No change was seen.</sentence>
<sentence id="S6">It <xcope id="X4"><cue type="speculation" ref="X4">might</cue> bind</xcope>.</sentence>
</DocumentPart></Document></DocumentSet></Annotation>"#;

const MODEL: &str = r#"
[model]
backend = "transformer"
[model.arch]
n_hidden = 8
encoder_layers = 1
attention_heads = 2
ff_width = 16
dropout = 0.0
[model.tokenizer]
max_len = 64
[train]
learning_rate = 0.01
max_epochs = 3
early_stop_patience = 1
"#;

fn sw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scopeworks"))
        .args(args)
        .current_dir(dir)
        .env_remove("SCOPEWORKS_ARTIFACTS_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sw(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn stepwise_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bf.xml"), XML).unwrap();
    std::fs::write(d.join("exp.toml"), format!("task = \"cue\"\n{MODEL}\n[[datasets]]\nname = \"BF\"\npath = \"bf.jsonl\"\n")).unwrap();

    ok(d, &["convert", "--in", "bf.xml", "--format", "bioscope", "--cue-kind", "speculation", "--name", "BF", "--out", "bf.jsonl"]);
    let header = std::fs::read_to_string(d.join("bf.jsonl")).unwrap();
    assert!(header.starts_with(r#"{"schema":"scopeworks-corpus","version":1"#));

    ok(d, &["split", "--in", "bf.jsonl", "--out-dir", ".", "--seed", "3"]);
    for part in ["train", "val", "test"] {
        assert!(d.join(format!("{part}.jsonl")).exists());
    }
    ok(d, &["encode", "--task", "cue", "--in", "bf.jsonl", "--out", "cue.jsonl"]);
    let first = std::fs::read_to_string(d.join("cue.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(v["task"], "cue");
    assert_eq!(v["labels"], serde_json::json!([3, 1, 3, 3, 3]));

    ok(d, &["train", "--in", "cue.jsonl", "--out", "cue.ckpt.json", "--config", "exp.toml", "--seed", "1"]);
    ok(d, &["tokenize", "--in", "cue.jsonl", "--checkpoint", "cue.ckpt.json", "--out", "tokens.jsonl"]);
    let tok: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(d.join("tokens.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(tok["class_order"], serde_json::json!([1, 2, 3, 4]));
    assert_eq!(tok["labels"].as_array().unwrap().len(), 64);

    ok(d, &["predict", "--checkpoint", "cue.ckpt.json", "--in", "cue.jsonl", "--out", "probs.jsonl", "--tokens-out", "ptok.jsonl"]);
    let a = ok(d, &["evaluate", "--in", "cue.jsonl", "--checkpoint", "cue.ckpt.json", "--out", "ckpt.json"]);
    let b = ok(d, &["evaluate", "--in", "cue.jsonl", "--probs", "probs.jsonl", "--tokens", "ptok.jsonl", "--out", "replay.json"]);
    let strip = |s: &str| s.lines().map(|l| l.replacen("cue.ckpt", "", 1).replacen("probs", "", 1)).collect::<Vec<_>>();
    let scores = |p: &str| -> Vec<f64> {
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join(p)).unwrap()).unwrap();
        v.as_array().unwrap().iter().map(|r| r["f1"].as_f64().unwrap()).collect()
    };
    assert_eq!(scores("ckpt.json"), scores("replay.json"));
    assert_eq!(strip(&a).len(), strip(&b).len());

    let csv = ok(d, &["report", "--in", "ckpt.json", "--in", "replay.json", "--format", "csv"]);
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn run_writes_bundle_and_honours_env_override() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bf.xml"), XML).unwrap();
    ok(d, &["convert", "--in", "bf.xml", "--format", "bioscope", "--name", "BF", "--out", "bf.jsonl"]);
    std::fs::write(
        d.join("exp.toml"),
        format!("task = \"scope\"\nruns = 2\nmethods = [\"average\"]\noutput_dir = \"cfg-out\"\n{MODEL}\n[[datasets]]\nname = \"BF\"\npath = \"bf.jsonl\"\n"),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_scopeworks"))
        .args(["run", "--config", "exp.toml"])
        .current_dir(d)
        .env("SCOPEWORKS_ARTIFACTS_DIR", d.join("env-out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bundle = d.join("env-out");
    for f in ["provenance.json", "metadata.json", "reports.json", "reports.txt", "reports.csv", "runs/run-0/reports.json", "runs/run-1/history.json"] {
        assert!(bundle.join(f).exists(), "missing {f}");
    }
    assert!(!d.join("cfg-out").exists());
    let prov: serde_json::Value = serde_json::from_slice(&std::fs::read(bundle.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seeds"], serde_json::json!([0, 1]));
    assert_eq!(prov["class_order"], serde_json::json!([0, 1]));
    assert_eq!(prov["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn failures_exit_nonzero_with_stage_tag() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.xml"), "<Document id=\"a\"><sentence id=\"S1\">x <cue ref=\"X9\" type=\"speculation\">may</cue></sentence></Document>").unwrap();
    let out = sw(d, &["convert", "--in", "bad.xml", "--format", "bioscope", "--out", "x.jsonl"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[convert]") && err.contains("X9"), "{err}");

    std::fs::write(d.join("exp.toml"), "task = \"cue\"\n[[datasets]]\nname = \"BF\"\npath = \"missing.jsonl\"\n").unwrap();
    let out = sw(d, &["run", "--config", "exp.toml", "--out", "o"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[load]") && err.contains("missing.jsonl"), "{err}");
}
