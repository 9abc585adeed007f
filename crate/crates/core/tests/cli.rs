use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use viewpose::config::{RunConfig, RESOLVED_CONFIG_FILE};

const TINY: &str = r#"
seed = 3

[data]
sequences = 6
frames = 4
resolution = 16

[model]
n_features = 4
resolution = 16

[model.widths]
pose_conv = [2, 4, 8, 16]
pose_fc = [32, 16]
view_conv = [4, 8]
view_fc = 16
decoder_bottleneck = 16
decoder_conv = 8
decoder_up = [4, 2]

[pretext]
epochs = 1
batch_size = 3

[downstream]
hidden = 8
epochs = 1
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_viewpose"));
    c.env_clear();
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

fn tree_hashes(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let h = hex::encode(Sha256::digest(fs::read(&p).unwrap()));
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), h);
            }
        }
    }
    out
}

#[test]
fn generate_is_deterministic_and_honours_views() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        ok(&["generate", "--config", cfg.to_str().unwrap(), "--seed", "1", "--views", "3", "--out", out.to_str().unwrap()]);
    }
    assert_eq!(tree_hashes(&a), tree_hashes(&b));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["views_per_scene"], 3);
    assert_eq!(m["sequences"][0]["views"].as_array().unwrap().len(), 3);
}

#[test]
fn generate_refuses_a_non_empty_directory_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("d");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let r = run(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!r.status.success());
    let err: serde_json::Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "invalid-argument");
    ok(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--force"]);
    assert!(!out.join("keep.txt").exists());
}

#[test]
fn usage_and_config_errors_are_structured() {
    let r = run(&["train-downstream", "--mode", "sideways"]);
    assert!(!r.status.success());
    let err: serde_json::Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");

    let r = bin().args(["generate", "--out", "/nonexistent/x"]).env("VIEWPOSE_PRETEXT__EPOCS", "2").output().unwrap();
    let err: serde_json::Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn frozen_mode_without_an_encoder_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("ds");
    let r = run(&["train-downstream", "--config", cfg.to_str().unwrap(), "--mode", "frozen", "--out", out.to_str().unwrap()]);
    assert!(!r.status.success());
    let err: serde_json::Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "invalid-argument");
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    ok(&["generate", "--config", &s(&cfg), "--out", &s(&data)]);
    let first = tmp.path().join("p1");
    ok(&["train-pretext", "--config", &s(&cfg), "--data", &s(&data), "--loss-preset", "rec-only", "--out", &s(&first)]);
    let resolved = first.join(RESOLVED_CONFIG_FILE);
    let c = RunConfig::load(Some(&resolved), []).unwrap();
    assert!(!c.pretext.loss_toggles.invar && !c.pretext.loss_toggles.equiv);

    let second = tmp.path().join("p2");
    ok(&["train-pretext", "--config", &s(&resolved), "--data", &s(&data), "--out", &s(&second)]);
    for f in ["metrics.jsonl", "pretext.ckpt", RESOLVED_CONFIG_FILE] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }

    let head = tmp.path().join("h");
    ok(&[
        "train-downstream", "--config", &s(&resolved), "--data", &s(&data), "--encoder", &s(&first.join("pretext.ckpt")),
        "--out", &s(&head),
    ]);
    let history = fs::read_to_string(head.join("history.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(history.lines().next().unwrap()).unwrap();
    assert_eq!(rec["report"]["protocol"], "CV");

    let ev = tmp.path().join("e");
    let table = ok(&[
        "eval", "--config", &s(&resolved), "--data", &s(&data), "--head", &s(&head.join("head.ckpt")),
        "--encoder", &s(&first.join("pretext.ckpt")), "--diagnostics", "--out", &s(&ev),
    ]);
    assert!(table.contains("Average") && table.contains("cross_view_invariance"), "{table}");

    let diag = tmp.path().join("g");
    ok(&["diagnose", "--config", &s(&resolved), "--data", &s(&data), "--checkpoint", &s(&first.join("pretext.ckpt")), "--out", &s(&diag)]);
    let d: serde_json::Value = serde_json::from_str(&fs::read_to_string(diag.join("diagnostics.json")).unwrap()).unwrap();
    assert!(d["cross_view_invariance"].as_f64().unwrap() >= 0.0);
}

#[test]
fn sweep_emits_a_table_with_an_argmin() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("sw");
    let table = ok(&["sweep", "--config", cfg.to_str().unwrap(), "--sizes", "2,4", "--out", out.to_str().unwrap()]);
    assert!(table.contains("argmin N = "), "{table}");
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(r["sizes"], serde_json::json!([2, 4]));
}
