use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use image::{Rgb, RgbImage};

fn lowlight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowlight"))
        .args(args)
        .env_remove("LOWLIGHT_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_corpus(dir: &Path, n: u32) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let img = RgbImage::from_fn(24, 16, |x, y| Rgb([(x * 10 + i) as u8, (y * 15) as u8, ((x + y) * 5) as u8]));
        img.save(dir.join(format!("im{i}.png"))).unwrap();
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest_entries(dir: &Path) -> Vec<serde_json::Value> {
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["entries"].as_array().unwrap().clone()
}

#[test]
fn degrade_empty_dir_writes_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    fs::create_dir(&input).unwrap();
    let out = tmp.path().join("out");
    let o = lowlight(&["degrade", "--in", s(&input), "--out", s(&out), "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(manifest_entries(&out).is_empty());
}

#[test]
fn replay_of_fresh_degrade_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    let out = tmp.path().join("out");
    write_corpus(&input, 3);
    let o = lowlight(&["degrade", "--in", s(&input), "--out", s(&out), "--seed", "9", "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest_entries(&out).len(), 3);

    let o = lowlight(&["replay", "--in", s(&input), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = lowlight(&[
        "replay",
        "--source",
        s(&input.join("im0.png")),
        "--sidecar",
        s(&out.join("im0.deg.json")),
        "--image",
        s(&out.join("im0.png")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn replay_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    let out = tmp.path().join("out");
    write_corpus(&input, 2);
    assert_eq!(code(&lowlight(&["degrade", "--in", s(&input), "--out", s(&out), "--seed", "3"])), 0);
    let path = out.join("im1.png");
    let mut img = image::open(&path).unwrap().to_rgb8();
    let px = img.get_pixel_mut(0, 0);
    px[0] = px[0].wrapping_add(1);
    img.save(&path).unwrap();
    assert_eq!(code(&lowlight(&["replay", "--in", s(&input), "--out", s(&out)])), 1);
}

#[test]
fn unreadable_input_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    write_corpus(&input, 1);
    fs::write(input.join("broken.png"), b"not a png").unwrap();
    let out = tmp.path().join("out");
    let o = lowlight(&["degrade", "--in", s(&input), "--out", s(&out), "--seed", "1"]);
    assert_eq!(code(&o), 1);
    assert_eq!(manifest_entries(&out).len(), 2);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&lowlight(&["frobnicate"])), 2);
    assert_eq!(code(&lowlight(&["degrade", "--bogus"])), 2);
    assert_eq!(code(&lowlight(&["replay"])), 2);
}

#[test]
fn bad_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    fs::create_dir(&input).unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[ranges.k]\nmax = -3.0\n").unwrap();
    let out = tmp.path().join("out");
    let o = lowlight(&["degrade", "--in", s(&input), "--out", s(&out), "--seed", "1", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = lowlight(&["degrade", "--in", s(&input), "--out", s(&out), "--seed", "1", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);

    let missing = tmp.path().join("missing.toml");
    let o = lowlight(&["degrade", "--in", s(&input), "--out", s(&out), "--seed", "1", "--config", s(&missing)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn every_baseline_method_runs_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    write_corpus(&input, 2);
    for method in ["retinex", "invgamma", "invgamma-poisson", "invgamma-mixed", "linear", "ours-mosaic"] {
        let out = tmp.path().join(method);
        let o = lowlight(&["baseline", "--method", method, "--in", s(&input), "--out", s(&out), "--seed", "4"]);
        assert_eq!(code(&o), 0, "{method}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(manifest_entries(&out).len(), 2);
        let o = lowlight(&["replay", "--in", s(&input), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{method}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn version_reports_schema() {
    let o = lowlight(&["--version"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("schema"));
}

#[test]
fn maet_train_and_eval_small_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = lowlight(&[
        "maet-train",
        "--n",
        "64",
        "--steps",
        "5",
        "--batch-size",
        "16",
        "--warmup-steps",
        "0",
        "--holdout",
        "32",
        "--seed",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curve = fs::read_to_string(out.join("loss_curve.csv")).unwrap();
    assert!(curve.starts_with("step,total,ort,obj,deg"));
    assert_eq!(curve.lines().count(), 6);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["holdout"]["pearson_k"].is_number());

    let report = tmp.path().join("eval.json");
    let o = lowlight(&[
        "maet-eval",
        "--model",
        s(&out.join("model.bin")),
        "--n",
        "32",
        "--seed",
        "2",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(report.exists());
}

#[test]
fn verify_writes_passing_report() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.json");
    let o = lowlight(&["verify", "--seed", "11", "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    assert!(v["environment"]["config_hash"].is_string());
}
