mod common;

use bcpnet::io::{load_image, save_image};
use bcpnet_core::prior::{estimate_ambient, initial_illumination};
use bcpnet_core::{recover, PatchSpec, RasterImage};
use common::*;

#[test]
fn enhance_happy_path_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = write_pair(dir.path(), 40, 30, 1);
    let out = dir.path().join("out.png");
    let report = dir.path().join("report.json");
    let dumps = dir.path().join("dumps");
    let o = run(&[
        "enhance", "--visible", s(&v), "--thermal", s(&t), "--out", s(&out),
        "--report", s(&report), "--dump-intermediates", s(&dumps),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.exists());
    let json = read_json(&report);
    assert_eq!(json["report_version"], 1);
    assert_eq!(json["status"], "ok");
    assert_eq!(json["inputs"]["width"], 40);
    assert!(json.get("timings_ms").is_none());
    let outputs = json["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 5);
    for o in outputs {
        assert!(std::path::Path::new(o["path"].as_str().unwrap()).exists());
        assert_eq!(o["scale"], 255.0);
    }
    let det = &json["detector"];
    let total = json["loss"]["final"]["total"].as_f64().unwrap()
        + det["beta"].as_f64().unwrap() * det["loss"].as_f64().unwrap();
    assert!((det["total"].as_f64().unwrap() - total).abs() < 1e-15);
}

#[test]
fn timings_are_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = write_pair(dir.path(), 20, 20, 2);
    let report = dir.path().join("r.json");
    let out = dir.path().join("o.png");
    let o = run(&[
        "enhance", "--visible", s(&v), "--thermal", s(&t), "--out", s(&out),
        "--report", s(&report), "--timings",
    ]);
    assert!(o.status.success());
    let stages: Vec<String> = read_json(&report)["timings_ms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            assert!(t["ms"].as_f64().unwrap() >= 0.0);
            t["stage"].as_str().unwrap().to_string()
        })
        .collect();
    assert!(stages.contains(&"laplacian".to_string()) && stages.contains(&"refine".to_string()));
}

#[test]
fn mismatched_sizes_exit_1_naming_both() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("v.png");
    let t = dir.path().join("t.png");
    save_image(&RasterImage::filled(12, 10, 3, 0.2).unwrap(), &v).unwrap();
    save_image(&RasterImage::filled(11, 10, 1, 0.2).unwrap(), &t).unwrap();
    let o = run(&["enhance", "--visible", s(&v), "--thermal", s(&t), "--out", s(&dir.path().join("o.png"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("12x10") && err.contains("11x10"), "{err}");
}

#[test]
fn usage_and_io_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["enhance", "--visible", "x.png"]).status.code(), Some(1));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let missing = dir.path().join("missing.png");
    let o = run(&["enhance", "--visible", s(&missing), "--thermal", s(&missing), "--out", "o.png"]);
    assert_eq!(o.status.code(), Some(2));
    let (v, t) = write_pair(dir.path(), 16, 16, 3);
    let o = run(&["enhance", "--visible", s(&v), "--thermal", s(&t), "--out", "o.png", "--lambda", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = bin()
        .args(["selftest"])
        .env("BCP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn non_convergence_exits_3_and_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = write_pair(dir.path(), 24, 24, 4);
    let report = dir.path().join("r.json");
    let o = run(&[
        "enhance", "--visible", s(&v), "--thermal", s(&t), "--out", s(&dir.path().join("o.png")),
        "--report", s(&report), "--max-iterations", "1", "--tolerance", "1e-14",
    ]);
    assert_eq!(o.status.code(), Some(3));
    let json = read_json(&report);
    assert_eq!(json["status"], "not_converged");
    assert!(!json["error"]["message"].as_str().unwrap().is_empty());
}

#[test]
fn no_smoothing_and_flat_attention_reduces_to_prior_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = write_pair(dir.path(), 32, 24, 5);
    let out = dir.path().join("o.png");
    let o = run(&[
        "enhance", "--visible", s(&v), "--thermal", s(&t), "--out", s(&out),
        "--lambda", "0", "--gamma", "1e-9", "--solver", "direct",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let visible = load_image(&v).unwrap();
    let a = estimate_ambient(&visible, 0.001).unwrap();
    let t_tilde = initial_illumination(&visible, &a, PatchSpec::new(7), 0.05).unwrap();
    let expected = recover(&visible, &t_tilde, &a, 0.05).unwrap();
    let got = load_image(&out).unwrap();
    let worst = got
        .data()
        .iter()
        .zip(expected.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1.0 / 255.0, "max difference {worst}");
}

#[test]
fn grayscale_visible_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("v.png");
    let t = dir.path().join("t.png");
    let gray = RasterImage::from_fn(16, 12, 1, |r, c, _| 0.1 + 0.02 * ((r + c) % 7) as f64).unwrap();
    save_image(&gray, &v).unwrap();
    save_image(&RasterImage::filled(16, 12, 1, 0.8).unwrap(), &t).unwrap();
    let out = dir.path().join("o.png");
    let o = run(&["enhance", "--visible", s(&v), "--thermal", s(&t), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_image(&out).unwrap().channels(), 3);
}

#[test]
fn network_solver_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = write_pair(dir.path(), 16, 16, 6);
    let report = dir.path().join("r.json");
    let o = run(&[
        "enhance", "--visible", s(&v), "--thermal", s(&t), "--out", s(&dir.path().join("o.png")),
        "--solver", "network", "--steps", "20", "--report", s(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json = read_json(&report);
    assert_eq!(json["solver"]["kind"], "network");
    assert_eq!(json["solver"]["history"].as_array().unwrap().len(), 20);
}

fn train(dir: &std::path::Path, v: &std::path::Path, t: &std::path::Path, steps: &str, tag: &str) -> serde_json::Value {
    let report = dir.join(format!("{tag}.json"));
    let ckpt = dir.join(format!("{tag}.ckpt"));
    let o = run(&[
        "train", "--visible", s(v), "--thermal", s(t), "--steps", steps, "--lr", "0.05", "--seed", "7",
        "--checkpoint", s(&ckpt), "--report", s(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(bcpnet::checkpoint::load(&ckpt).is_ok());
    read_json(&report)
}

#[test]
fn train_single_step_history() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = write_pair(dir.path(), 16, 16, 7);
    let json = train(dir.path(), &v, &t, "1", "one");
    assert_eq!(json["solver"]["history"].as_array().unwrap().len(), 1);
}

#[test]
fn train_is_deterministic_and_lowers_loss() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = write_pair(dir.path(), 16, 16, 8);
    let a = train(dir.path(), &v, &t, "500", "a");
    let b = train(dir.path(), &v, &t, "500", "b");
    assert_eq!(a["solver"]["history"], b["solver"]["history"]);
    assert_eq!(
        std::fs::read(dir.path().join("a.ckpt")).unwrap(),
        std::fs::read(dir.path().join("b.ckpt")).unwrap()
    );
    let history = a["solver"]["history"].as_array().unwrap();
    assert!(history.last().unwrap().as_f64().unwrap() < history[0].as_f64().unwrap());
}

#[test]
fn train_divergence_exits_3_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let (v, t) = write_pair(dir.path(), 16, 16, 9);
    let report = dir.path().join("d.json");
    let o = run(&[
        "train", "--visible", s(&v), "--thermal", s(&t), "--steps", "50", "--lr", "1e200",
        "--checkpoint", s(&dir.path().join("d.ckpt")), "--report", s(&report),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let json = read_json(&report);
    assert_eq!(json["status"], "diverged");
    assert!(json["solver"]["diverged_at_step"].as_u64().is_some());
}

#[test]
fn selftest_passes_and_fault_injection_fails() {
    let o = run(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    let o = run(&["selftest", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
