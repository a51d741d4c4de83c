use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hedonic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hedonic"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().unwrap_or_default())
        .unwrap_or_else(|e| panic!("stdout {text:?}: {e}; stderr {}", String::from_utf8_lossy(&out.stderr)))
}

fn stderr_reason(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes a small dataset and returns the generated config path.
fn small_synth(dir: &Path, n: usize) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, r#"{"n": 0, "image_size": 32, "min_side": 4, "max_side": 14}"#).unwrap();
    let out = hedonic(&["synth", "--spec", s(&spec), "--out", s(dir), "--n", &n.to_string(), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("config.json")
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in ["synth", "fetch-tiles", "train", "evaluate", "explain", "compare"] {
        let out = hedonic(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
    assert_eq!(hedonic(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = hedonic(&["appraise"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "{stderr}");
    assert_eq!(stderr_reason(&out)["error"], "usage");
}

#[test]
fn compare_reproduces_published_reductions() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let linreg = write("linreg.json", r#"{"rmse": 59922, "mae": 39352, "mape": 14.21}"#);
    let mlp = write("mlp.json", r#"{"rmse": 55944, "mae": 35919, "mape": 12.89}"#);
    let fusion = write("fusion.json", r#"{"rmse": 51814, "mae": 33326, "mape": 12.00}"#);

    let out = hedonic(&["compare", "--baseline", s(&linreg), "--challenger", s(&fusion)]);
    assert!(out.status.success());
    let r = stdout_json(&out);
    assert_eq!(format!("{:.1}", r["mae"].as_f64().unwrap()), "15.3");

    let r = stdout_json(&hedonic(&["compare", "--baseline", s(&mlp), "--challenger", s(&fusion)]));
    assert_eq!(format!("{:.1}", r["mae"].as_f64().unwrap()), "7.2");

    let out = hedonic(&["compare", "--baseline", s(&write("bad.json", "[1,2]")), "--challenger", s(&fusion)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_perfect_fixture_prints_zero_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("id,lat,lon,price,sqft\n");
    for i in 0..40 {
        csv.push_str(&format!("p{i},35.6,-82.5,250000,{}\n", 1000 + 37 * i));
    }
    std::fs::write(dir.path().join("data.csv"), csv).unwrap();
    std::fs::write(dir.path().join("config.json"), r#"{"features": {"numeric": ["sqft"]}}"#).unwrap();
    let cfg = dir.path().join("config.json");
    let ckpt = dir.path().join("lin.ckpt");
    let out = hedonic(&["train", "--config", s(&cfg), "--model", "linreg", "--out", s(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = hedonic(&["evaluate", "--ckpt", s(&ckpt), "--config", s(&cfg), "--split", "test"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = stdout_json(&out);
    let keys: Vec<&String> = m.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["mae", "mape", "rmse"]);
    for k in ["rmse", "mae", "mape"] {
        assert!(m[k].as_f64().unwrap().abs() < 1e-6, "{k} = {}", m[k]);
    }
}

#[test]
fn train_is_reproducible_and_explain_writes_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synth(dir.path(), 60);
    let train = |name: &str| {
        let ckpt = dir.path().join(name);
        let out = hedonic(&["train", "--config", s(&cfg), "--model", "fusion", "--out", s(&ckpt), "--epochs", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(stdout_json(&out)["epochs"], 2);
        ckpt
    };
    let a = train("a.ckpt");
    let b = train("b.ckpt");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let report = |p: &Path| std::fs::read_to_string(p.with_extension("train.jsonl")).unwrap();
    assert_eq!(report(&a), report(&b));
    assert_eq!(report(&a).lines().count(), 2);

    let out = hedonic(&["explain", "--ckpt", s(&a), "--config", s(&cfg), "--id", "s00007", "--window", "8", "--stride", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let png = dir.path().join("out/s00007_heatmap.png");
    let json: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/s00007_heatmap.json")).unwrap()).unwrap();
    assert_eq!(image::open(&png).unwrap().width(), 32);
    assert_eq!(json["id"], "s00007");
    assert_eq!(json["raw"]["shape"], serde_json::json!([7, 7]));
    assert_eq!(json["spec"]["window"], 8);

    let out = hedonic(&["explain", "--ckpt", s(&a), "--config", s(&cfg), "--id", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_and_data_failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = hedonic(&["train", "--config", s(&missing), "--model", "mlp", "--out", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_reason(&out)["error"], "config");

    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, "{}").unwrap();
    let out = hedonic(&["train", "--config", s(&cfg), "--model", "mlp", "--out", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(1), "data_csv does not exist");

    let bad_ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&bad_ckpt, b"not a checkpoint").unwrap();
    std::fs::write(dir.path().join("data.csv"), "id,lat,lon,price\na,1,1,100\n").unwrap();
    let out = hedonic(&["evaluate", "--ckpt", s(&bad_ckpt), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let line = String::from_utf8_lossy(&out.stderr);
    assert_eq!(line.trim().lines().count(), 1);
}

#[test]
fn divergence_exits_with_training_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synth(dir.path(), 40);
    let out = hedonic(&[
        "train", "--config", s(&cfg), "--model", "mlp", "--out", s(&dir.path().join("m.ckpt")), "--lr", "1e30",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_reason(&out)["error"], "training");
}

#[test]
fn unreachable_tile_server_exits_with_network_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("data.csv"), "id,lat,lon,price\na,35.6,-82.5,100000\n").unwrap();
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let cfg = dir.path().join("config.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"tiles": {{"tile_url_template": "http://{addr}/{{z}}/{{x}}/{{y}}.png", "max_retries": 0, "retry_base_ms": 1, "timeout_ms": 500}}}}"#
        ),
    )
    .unwrap();
    let out = hedonic(&["fetch-tiles", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["failed"], serde_json::json!(["a"]));
}
