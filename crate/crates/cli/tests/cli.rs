use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lvseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvseg")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn metrics(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn phantom_is_reproducible_from_its_seed() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    ok(&lvseg(&["phantom", s(&a), "--seed", "5"]));
    ok(&lvseg(&["phantom", s(&b), "--seed", "5"]));
    ok(&lvseg(&["phantom", s(&c), "--seed", "6"]));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_eq!(dir_bytes(&a.join("apriori")), dir_bytes(&b.join("apriori")));
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn phantom_rejects_zero_transmurality() {
    let t = tempfile::tempdir().unwrap();
    let spec = t.path().join("spec.toml");
    fs::write(&spec, "[infarct]\ntransmurality = 0.0\n").unwrap();
    let out = lvseg(&["phantom", s(&t.path().join("b")), "--spec", s(&spec)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn run_is_thread_count_invariant_and_writes_metrics() {
    let t = tempfile::tempdir().unwrap();
    let bundle = t.path().join("bundle");
    ok(&lvseg(&["phantom", s(&bundle), "--seed", "11"]));
    let (o1, o2) = (t.path().join("o1"), t.path().join("o2"));
    ok(&lvseg(&["--threads", "1", "run", s(&bundle), s(&o1)]));
    ok(&lvseg(&["--threads", "2", "run", s(&bundle), s(&o2)]));

    let contours = dir_bytes(&o1.join("contours"));
    assert!(!contours.is_empty());
    assert_eq!(contours, dir_bytes(&o2.join("contours")));

    let m = metrics(&o1);
    let dice = m["volumetric_dice_myo"].as_f64().unwrap();
    assert!(dice > 0.85, "myocardium Dice {dice}");
    assert!(m["mean_distance_mm"].as_f64().unwrap() < 1.5);

    let eval = lvseg(&["eval", s(&o1.join("contours")), s(&o2.join("contours"))]);
    ok(&eval);
    let r: Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(r["volumetric_dice_myo"].as_f64(), Some(1.0));
    assert_eq!(r["mean_distance_mm"].as_f64(), Some(0.0));
}

#[test]
fn skip_align_matches_full_run_without_misalignment() {
    let t = tempfile::tempdir().unwrap();
    let spec = t.path().join("spec.toml");
    fs::write(&spec, "misalignment_px = 0\nseed = 4\n").unwrap();
    let bundle = t.path().join("bundle");
    ok(&lvseg(&["phantom", s(&bundle), "--spec", s(&spec)]));
    let (full, skip) = (t.path().join("full"), t.path().join("skip"));
    ok(&lvseg(&["run", s(&bundle), s(&full)]));
    ok(&lvseg(&["run", s(&bundle), s(&skip), "--skip-align"]));
    let a = metrics(&full)["volumetric_dice_myo"].as_f64().unwrap();
    let b = metrics(&skip)["volumetric_dice_myo"].as_f64().unwrap();
    assert!((a - b).abs() <= 0.001 * a, "full {a}, skipped {b}");
}

#[test]
fn missing_apriori_file_fails_in_load_stage() {
    let t = tempfile::tempdir().unwrap();
    let bundle = t.path().join("bundle");
    ok(&lvseg(&["phantom", s(&bundle), "--seed", "2"]));
    fs::remove_file(bundle.join("apriori").join("epi_0003.csv")).unwrap();
    let out = lvseg(&["run", s(&bundle), s(&t.path().join("out"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("load"), "{err}");
    assert!(err.contains("epi_0003.csv"), "{err}");
}

#[test]
fn detect_stage_writes_contours_without_metrics() {
    let t = tempfile::tempdir().unwrap();
    let bundle = t.path().join("bundle");
    ok(&lvseg(&["phantom", s(&bundle), "--seed", "9"]));
    let out = t.path().join("out");
    ok(&lvseg(&["detect", s(&bundle), s(&out), "--skip-align"]));
    assert!(!dir_bytes(&out.join("contours")).is_empty());
    assert!(!out.join("metrics.json").exists());
    let log: Value = serde_json::from_str(&fs::read_to_string(out.join("run_log.json")).unwrap()).unwrap();
    assert_eq!(log["config"]["skip_align"].as_bool(), Some(true));
}

#[test]
fn invalid_override_is_a_validation_error() {
    let t = tempfile::tempdir().unwrap();
    let bundle = t.path().join("bundle");
    ok(&lvseg(&["phantom", s(&bundle), "--seed", "1"]));
    let out = lvseg(&["run", s(&bundle), s(&t.path().join("out")), "--band-sa", "4"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn eval_of_empty_directories_fails() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    fs::create_dir(&a).unwrap();
    fs::create_dir(&b).unwrap();
    let out = lvseg(&["eval", s(&a), s(&b)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn eval_writes_report_file() {
    let t = tempfile::tempdir().unwrap();
    let bundle = t.path().join("bundle");
    ok(&lvseg(&["phantom", s(&bundle), "--seed", "3"]));
    let truth = bundle.join("truth");
    let report = t.path().join("r.json");
    ok(&lvseg(&["eval", s(&truth), s(&truth), "--spacing", "1.34", "--out", s(&report)]));
    let r: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["volumetric_dice_lv"].as_f64(), Some(1.0));
}
