use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn umt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_umt")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).unwrap()
}

const SMALL: &str = r#"
[synth]
videos = 4
clips = 12

[model]
model_dim = 16
heads = 2
decoder_layers = 1
bottleneck_tokens = 2
max_len = 32

[train]
epochs = 2
batch_size = 2

[gradcheck]
samples = 20

[bench]
model_dim = 16
heads = 2
lengths = [8, 16]
"#;

fn setup(dir: &Path) -> String {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    cfg.to_str().unwrap().to_string()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();

    let manifest = ok(&umt(&["synth", "--config", &cfg, "--seed", "4", "--out", &p("data")]));
    let manifest = manifest.trim().to_string();
    assert!(Path::new(&manifest).exists());

    ok(&umt(&["train", "--config", &cfg, "--seed", "1", "--out", &p("run"), "--data", &manifest]));
    let history: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("run/history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);
    let ckpt = p("run/model.ckpt");

    let table = ok(&umt(&["eval", "--config", &cfg, "--data", &manifest, "--checkpoint", &ckpt, "--out", &p("report.json")]));
    assert!(table.contains("HIT@1"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("report.json")).unwrap()).unwrap();
    assert!(report["map_avg"].is_number() && report["hd_map"].is_number());

    ok(&umt(&["eval", "--data", &manifest, "--checkpoint", &ckpt, "--tasks", "hd", "--out", &p("hd.json")]));
    let hd: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("hd.json")).unwrap()).unwrap();
    assert!(hd.get("r1_at").is_none());

    ok(&umt(&[
        "predict", "--data", &manifest, "--checkpoint", &ckpt, "--top-k", "3", "--center-mode", "local_maxima", "--out", &p("preds.jsonl"),
    ]));
    let preds = fs::read_to_string(p("preds.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 4);
    for line in preds.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["pred_relevant_windows"].as_array().unwrap().len() <= 3);
    }
}

#[test]
fn training_is_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let manifest = ok(&umt(&["synth", "--config", &cfg, "--out", &p("data")])).trim().to_string();
    for run in ["a", "b"] {
        ok(&umt(&["train", "--config", &cfg, "--seed", "9", "--out", &p(run), "--data", &manifest]));
    }
    assert_eq!(fs::read(p("a/model.ckpt")).unwrap(), fs::read(p("b/model.ckpt")).unwrap());
}

#[test]
fn diagnostics_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let text = ok(&umt(&["gradcheck", "--config", &cfg, "--seed", "2", "--out", &p("grad.json")]));
    assert!(text.contains("checked 20 parameters"));
    let g: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("grad.json")).unwrap()).unwrap();
    assert!(g["max_rel_error"].as_f64().unwrap() < 1e-4);

    let table = ok(&umt(&["bench-attn", "--config", &cfg, "--out", &p("bench.json")]));
    assert!(table.lines().count() >= 2);
    assert!(fs::read_to_string(p("bench.json")).unwrap().contains("bottleneck"));
}

#[test]
fn failures_emit_a_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();

    let e = error_line(&umt(&["train", "--out", &p("x"), "--data", &p("missing.json")]));
    assert_eq!(e["error"], "io");

    fs::write(p("bad.toml"), "[model]\nmodel_dimm = 3\n").unwrap();
    let e = error_line(&umt(&["synth", "--config", &p("bad.toml"), "--out", &p("d")]));
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("model_dimm"));

    let e = error_line(&umt(&["frobnicate"]));
    assert_eq!(e["error"], "usage");

    fs::write(p("ckpt"), b"garbage").unwrap();
    let cfg = setup(dir.path());
    let manifest = ok(&umt(&["synth", "--config", &cfg, "--out", &p("data")])).trim().to_string();
    let e = error_line(&umt(&["predict", "--data", &manifest, "--checkpoint", &p("ckpt"), "--out", &p("o.jsonl")]));
    assert_eq!(e["error"], "checkpoint");
}
