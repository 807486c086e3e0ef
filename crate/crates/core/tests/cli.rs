use std::path::Path;
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"{
    "dataset": {"source": "synthetic", "spec": {"n_samples": 60, "n_features": 4,
        "noise_profile": {"kind": "homoscedastic", "sigma": 0.1}, "function_tag": "sine-mix", "seed": 1}},
    "model_a": {"hidden_widths": [8], "epochs": 5},
    "model_b": {"hidden_widths": [8], "epochs": 5},
    "ensemble": {"members": 3, "calibration_folds": 2, "calibration_bins": 3},
    "augmentation": {"scale_factors": [0.05], "sizes": [150]},
    "cv_folds": 3,
    "bench": {"batch_size": 64, "repeats": 3}
}"#;

fn errorbar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_errorbar"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn pipeline_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let run = errorbar(&["pipeline", "--config", &cfg, "--out", out_s, "--threads", "2"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["bundle.json", "learning_curve.csv", "stats_table.csv", "learning_curve.svg", "augmented.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let input = dir.path().join("in.csv");
    std::fs::write(&input, "x0,x1,x2,x3\n0.1,0.2,0.3,0.4\n0.9,0.8,0.7,0.6\n0.5,0.5,0.5,0.5\n").unwrap();
    let preds = dir.path().join("pred.csv");
    let bundle = out.join("bundle.json");
    let p = errorbar(&[
        "predict",
        "--bundle",
        bundle.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        preds.to_str().unwrap(),
    ]);
    assert!(p.status.success(), "{}", String::from_utf8_lossy(&p.stderr));
    let text = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("x0,x1,x2,x3,y_hat,sigma_hat\n"));

    let bench = errorbar(&["bench", "--config", &cfg, "--out", out_s]);
    assert!(bench.status.success(), "{}", String::from_utf8_lossy(&bench.stderr));
    assert!(String::from_utf8_lossy(&bench.stdout).contains("speedup"));
}

#[test]
fn thread_count_and_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["pipeline", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(errorbar(&args).status.success());
        std::fs::read(out.join("bundle.json")).unwrap()
    };
    let one = run("one", &["--threads", "1"]);
    assert_eq!(one, run("three", &["--threads", "3"]));
    assert_ne!(one, run("reseeded", &["--seed", "5"]));
}

#[test]
fn exit_codes_distinguish_validation_from_failure() {
    let dir = tempfile::tempdir().unwrap();
    let bad_scale = write_config(dir.path(), r#"{"augmentation": {"scale_factors": [0.7]}}"#);
    let r = errorbar(&["pipeline", "--config", &bad_scale, "--out", dir.path().join("a").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("0.001 to 0.5"));

    let diverging = TINY_CONFIG.replace(r#""model_a": {"hidden_widths": [8], "epochs": 5}"#, r#""model_a": {"hidden_widths": [8], "epochs": 5, "learning_rate": 1e200}"#);
    let cfg = write_config(dir.path(), &diverging);
    let r = errorbar(&["pipeline", "--config", &cfg, "--out", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("train A"));

    let r = errorbar(&["distill", "--config", &cfg, "--out", dir.path().join("missing").to_str().unwrap()]);
    assert_ne!(r.status.code(), Some(0));
}

#[test]
fn synth_and_show_config() {
    let dir = tempfile::tempdir().unwrap();
    let r = errorbar(&["synth", "--out", dir.path().to_str().unwrap(), "--seed", "3"]);
    assert!(r.status.success());
    let text = std::fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert!(text.starts_with("x0,x1,"));

    let r = errorbar(&["show-config"]);
    let shown: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(shown["ensemble"]["members"], 20);
    assert_eq!(shown["cv_folds"], 5);
}
