use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn zf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zoneforge"))
        .current_dir(dir)
        .args(args)
        .env_remove("ZONEFORGE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = zf(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_configs(dir: &Path) {
    fs::write(
        dir.join("phantom.json"),
        r#"{"dims":[32,32,3],"spacing_mm":[2.0,2.0,3.0],"gland_semi_axes_mm":[18,13,3],"center_jitter_mm":2}"#,
    )
    .unwrap();
    fs::write(
        dir.join("prep.json"),
        r#"{"target_spacing_mm":2.0,"crop_size":[32,32],"n_augment":1,"alpha":3,"sigma":4}"#,
    )
    .unwrap();
    fs::write(
        dir.join("train.json"),
        r#"{"preset":"tiny","optimizer":{"epochs":2,"batch_size":4}}"#,
    )
    .unwrap();
}

fn pipeline(dir: &Path) {
    write_configs(dir);
    let s = ["--seed", "42", "--deterministic"];
    let with = |args: &[&'static str]| -> Vec<&'static str> { [args, &s[..]].concat() };
    ok(
        dir,
        &with(&["phantom", "--config", "phantom.json", "--count", "4", "--out", "raw"]),
    );
    ok(dir, &with(&["split", "--data", "raw"]));
    ok(
        dir,
        &with(&["prep", "--config", "prep.json", "--data", "raw", "--out", "prepped"]),
    );
    ok(
        dir,
        &with(&["augment", "--config", "prep.json", "--data", "prepped", "--out", "aug"]),
    );
    ok(
        dir,
        &with(&[
            "train",
            "--regime",
            "im",
            "--combo",
            "mag",
            "--config",
            "train.json",
            "--data",
            "aug",
            "--out",
            "m",
        ]),
    );
    ok(dir, &with(&["eval", "--model", "m", "--data", "aug"]));
    ok(
        dir,
        &with(&["tabulate", "--model", "m", "--data", "aug", "--split", "all"]),
    );
}

#[test]
fn pipeline_is_reproducible_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "m/final.ckpt",
        "m/best.ckpt",
        "m/trainlog.csv",
        "m/eval/metrics.csv",
        "m/eval/summary.csv",
        "m/tabulate/tabulation.csv",
        "aug/manifest.json",
    ] {
        let x = fs::read(a.path().join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} differs between runs");
    }
    let manifest = fs::read_to_string(a.path().join("aug/manifest.json")).unwrap();
    assert_eq!(manifest.matches("\"case_id\"").count(), 4 + 3);
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("m/run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 42);
    assert_eq!(run["config_hash"].as_str().unwrap().len(), 64);
    let tab = fs::read_to_string(a.path().join("m/tabulate/tabulation.csv")).unwrap();
    assert!(tab.starts_with("Map,PG mask,PG predicted"));
}

#[test]
fn predict_and_overlay_write_files() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    write_configs(dir);
    ok(
        dir,
        &[
            "phantom",
            "--config",
            "phantom.json",
            "--count",
            "2",
            "--out",
            "raw",
            "--seed",
            "1",
        ],
    );
    ok(dir, &["split", "--data", "raw", "--train-fraction", "0.5"]);
    ok(
        dir,
        &[
            "train",
            "--regime",
            "um",
            "--combo",
            "mag",
            "--combo",
            "sws+mag",
            "--config",
            "train.json",
            "--data",
            "raw",
            "--out",
            "um",
            "--epochs",
            "1",
        ],
    );
    ok(
        dir,
        &[
            "predict", "--model", "um", "--data", "raw", "--split", "all", "--out", "pred",
        ],
    );
    assert!(dir.join("pred/mag/case_000.mmask").exists());
    let combo_dirs = fs::read_dir(dir.join("pred"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(combo_dirs, 2);
    ok(
        dir,
        &[
            "overlay", "--data", "raw", "--case", "case_001", "--out", "ov", "--scale", "2",
        ],
    );
    let pngs = fs::read_dir(dir.join("ov"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 3);
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(zf(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        zf(d.path(), &["train", "--regime", "xx", "--data", "a", "--out", "b"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(zf(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn domain_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let missing = zf(dir, &["split", "--data", "nowhere"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    fs::write(dir.join("bad.json"), r#"{"dims":[32,32,3],"colour":"blue"}"#).unwrap();
    assert_eq!(
        zf(dir, &["phantom", "--config", "bad.json", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    write_configs(dir);
    ok(
        dir,
        &["phantom", "--config", "phantom.json", "--count", "2", "--out", "raw"],
    );
    let out = zf(
        dir,
        &[
            "train", "--regime", "im", "--combo", "mag+nope", "--data", "raw", "--out", "m",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let out = zf(dir, &["train", "--regime", "im", "--data", "raw", "--out", "m"]);
    assert_eq!(out.status.code(), Some(1));
}
