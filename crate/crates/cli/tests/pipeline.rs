use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn prefse(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefse"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out_dir: &Path, args: &[&str]) {
    let out = prefse(out_dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn tiny_pipeline_produces_every_artifact_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "3", "synth", "--preset", "tiny", "--manifest-only"]);
    assert!(d.join("manifest.json").exists());
    assert_eq!(read_json(&d.join("synth.config.json"))["seed"], 3);

    ok(d, &["--seed", "1", "train", "--task", "multi", "--epochs", "1", "--crop", "16", "--val-crop", "16"]);
    for f in ["weights_multi.psew", "history_multi.csv", "train_multi.json", "train.config.json"] {
        assert!(d.join(f).exists(), "{f}");
    }

    ok(d, &["--seed", "5", "elicit", "--simulated", "--beta", "-0.055", "--gamma", "0.5"]);
    let recovery = read_json(&d.join("elicit.json"));
    for scene in ["bus", "cafe", "pedestrian", "street"] {
        let r = &recovery[scene];
        assert!(r["abs_beta_error"].as_f64().unwrap() <= 0.1 / 18.0 + 1e-12, "{scene}: {r}");
        assert!(r["abs_gamma_error"].as_f64().unwrap() <= 0.1 + 1e-12, "{scene}: {r}");
    }
    assert!(d.join("session.jsonl").exists() && d.join("preferences.json").exists());

    ok(d, &["evaluate"]);
    for f in ["metrics.csv", "metrics.json", "confusion.csv", "conditions.csv", "predictions.csv"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let first = std::fs::read(d.join("metrics.csv")).unwrap();
    let first_conditions = std::fs::read(d.join("conditions.csv")).unwrap();
    ok(d, &["evaluate"]);
    assert_eq!(first, std::fs::read(d.join("metrics.csv")).unwrap());
    assert_eq!(first_conditions, std::fs::read(d.join("conditions.csv")).unwrap());

    ok(d, &["embeddings", "--layer", "final_linear", "--iterations", "300"]);
    let tsne = std::fs::read_to_string(d.join("tsne_final_linear.csv")).unwrap();
    assert_eq!(tsne.lines().next().unwrap(), "id,scene,snr,x,y");
    assert_eq!(tsne.lines().count(), 21);

    ok(d, &["enhance", "--conditions", "noisy,max_se"]);
    let reports = std::fs::read_to_string(d.join("enhance_reports.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), 40);
    let first: Value = serde_json::from_str(reports.lines().next().unwrap()).unwrap();
    assert!(first.get("A").is_some());
    assert!(d.join("enhanced/max_se").read_dir().unwrap().count() == 20);
}

#[test]
fn config_echo_replays_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&a, &["synth", "--preset", "tiny", "--manifest-only"]);
    ok(&a, &["--seed", "8", "elicit", "--simulated", "--beta", "0.02", "--gamma", "0.4", "--noise", "0.2"]);
    std::fs::create_dir_all(&b).unwrap();
    std::fs::copy(a.join("manifest.json"), b.join("manifest.json")).unwrap();
    let echo = a.join("elicit.config.json");
    ok(&b, &["--config-file", echo.to_str().unwrap(), "elicit"]);
    assert_eq!(
        std::fs::read(a.join("preferences.json")).unwrap(),
        std::fs::read(b.join("preferences.json")).unwrap()
    );
    assert_eq!(read_json(&b.join("elicit.config.json"))["seed"], 8);
}

#[test]
fn exit_codes_distinguish_usage_prerequisites_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(prefse(d, &["train"]).status.code(), Some(3));
    assert_eq!(prefse(d, &["evaluate"]).status.code(), Some(3));
    assert_eq!(prefse(d, &["frobnicate"]).status.code(), Some(2));
    ok(d, &["synth", "--preset", "tiny", "--manifest-only"]);
    assert_eq!(prefse(d, &["elicit"]).status.code(), Some(2));
    assert_eq!(prefse(d, &["train", "--task", "regression"]).status.code(), Some(2));
    std::fs::write(d.join("weights_multi.psew"), b"not weights").unwrap();
    std::fs::write(d.join("preferences.json"), b"{}").unwrap();
    let out = prefse(d, &["evaluate"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim().lines().count(), 1);
}
