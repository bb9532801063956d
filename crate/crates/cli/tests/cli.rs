use std::path::Path;
use std::process::Command;

use serde_json::Value;
use wimp_core::model::{ModelConfig, WimpModel};

fn wimp(args: &[&str]) -> (i32, Value, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_wimp"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let v = if stdout.trim().is_empty() { Value::Null } else { serde_json::from_str(&stdout).unwrap() };
    (out.status.code().unwrap(), v, String::from_utf8(out.stderr).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_propose_predict_whatif() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let (code, v, err) = wimp(&["generate-data", "--out", s(&data), "--n", "6", "--seed", "2", "--mix", "left=0.5,follow=0.5"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(v["n_scenarios"], 6);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let entry = &manifest["entries"][0];
    let scenario = data.join(entry["path"].as_str().unwrap());
    let sc: Value = serde_json::from_str(&std::fs::read_to_string(&scenario).unwrap()).unwrap();
    let map = data.join(manifest["maps"][sc["map_id"].as_str().unwrap()].as_str().unwrap());

    let (code, v, err) = wimp(&["propose", "--map", s(&map), "--scenario", s(&scenario), "--k", "2"]);
    assert_eq!(code, 0, "{err}");
    assert!(!v.as_array().unwrap().is_empty());

    let ckpt = dir.path().join("m.ckpt");
    WimpModel::new(ModelConfig::desk(), 5).unwrap().save(&ckpt).unwrap();
    let (code, v, err) = wimp(&["predict", "--scenario", s(&scenario), "--ckpt", s(&ckpt), "--k", "3"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(v["top_k"]["trajectories"].as_array().unwrap().len(), 3);
    assert_eq!(v["prediction_set"]["trajectories"].as_array().unwrap().len(), 6);
    let (_, again, _) = wimp(&["predict", "--scenario", s(&scenario), "--ckpt", s(&ckpt), "--k", "3", "--map", s(&map)]);
    assert_eq!(again, v);

    let edits = dir.path().join("edits.json");
    std::fs::write(&edits, "[]").unwrap();
    let (code, v, err) = wimp(&["whatif", "--scenario", s(&scenario), "--ckpt", s(&ckpt), "--edits", s(&edits)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(v["baseline"], v["edited"]);
    for d in v["deltas"]["per_mixture"].as_array().unwrap() {
        assert_eq!(d["endpoint_displacement"], 0.0);
        assert_eq!(d["terminal_speed_change"], 0.0);
    }
}

#[test]
fn generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(wimp(&["generate-data", "--out", s(d), "--n", "5", "--seed", "9"]).0, 0);
    }
    let manifest = std::fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(manifest, std::fs::read(b.join("manifest.json")).unwrap());
    let m: Value = serde_json::from_slice(&manifest).unwrap();
    for e in m["entries"].as_array().unwrap() {
        let p = e["path"].as_str().unwrap();
        assert_eq!(std::fs::read(a.join(p)).unwrap(), std::fs::read(b.join(p)).unwrap());
    }
}

#[test]
fn failures_print_json_on_stderr() {
    let (code, _, err) = wimp(&["eval", "--data", "/nonexistent", "--ckpt", "/nonexistent"]);
    assert_eq!(code, 1);
    let v: Value = serde_json::from_str(err.trim().lines().last().unwrap()).unwrap();
    assert_eq!(v["error"], "Io");
    assert!(v["detail"].is_string());

    let (code, _, err) = wimp(&["generate-data", "--out", "/tmp/x", "--mix", "left=2"]);
    assert_eq!(code, 1);
    let v: Value = serde_json::from_str(err.trim().lines().last().unwrap()).unwrap();
    assert_eq!(v["error"], "InvalidMix");
}
