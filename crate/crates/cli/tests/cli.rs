use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn intersim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intersim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// The shipped random-arrival scenario, shortened.
fn short_generated(dir: &Path, duration: f64) -> PathBuf {
    let text = fs::read_to_string(shipped("macroscopic.scenario")).unwrap();
    let text: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with("duration") {
                format!("duration = {duration}")
            } else {
                l.to_string()
            }
        })
        .collect();
    let path = dir.join("short.scenario");
    fs::write(&path, text.join("\n")).unwrap();
    path
}

#[test]
fn missing_config_exits_2_and_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.scenario");
    let out = intersim(&[
        "run-scenario",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.scenario"), "{}", stderr(&out));
}

#[test]
fn unitless_speed_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.scenario");
    fs::write(
        &cfg,
        "[[vehicle]]\nname = \"a\"\napproach = \"south\"\nmaneuver = \"straight\"\n\
         position = 0.0\nspeed = 12.0\nv_ref = \"45 km/h\"\n",
    )
    .unwrap();
    let out = intersim(&[
        "run-scenario",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("bad.scenario") && msg.contains("speed"), "{msg}");
}

#[test]
fn sweep_over_a_scripted_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = intersim(&[
        "sweep-density",
        "--config",
        shipped("three_vehicle.scenario").to_str().unwrap(),
        "--rates",
        "0.01",
        "--seeds",
        "1",
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_scenario_writes_every_listed_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = intersim(&[
        "run-scenario",
        "--config",
        shipped("three_vehicle.scenario").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let manifest: toml::Table = fs::read_to_string(dir.join("manifest.toml")).unwrap().parse().unwrap();
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap())
        .collect();
    for f in [
        "traces.csv",
        "metrics.csv",
        "events.csv",
        "violations.csv",
        "summary.csv",
        "speed.svg",
        "manifest.toml",
    ] {
        assert!(files.contains(&f), "{f} not in manifest");
    }
    for f in &files {
        assert!(dir.join(f).is_file(), "{f} listed but missing");
    }
    assert_eq!(manifest["violations"].as_integer(), Some(0));
}

#[test]
fn sweep_writes_one_directory_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_generated(tmp.path(), 3.0);
    let dir = tmp.path().join("sweep");
    let out = intersim(&[
        "sweep-density",
        "--config",
        cfg.to_str().unwrap(),
        "--rates",
        "0.01,0.02",
        "--seeds",
        "4",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let mut runs: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .flatten()
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    runs.sort();
    assert_eq!(runs, ["rate-0.01_seed-4", "rate-0.02_seed-4"]);
    let agg = fs::read_to_string(dir.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);
    assert!(agg.starts_with("rate,seed,density,mean_nu"));
    for f in ["curves.csv", "dips.csv", "sweep.svg", "manifest.toml"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}
