#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn pandaface(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pandaface"))
        .args(args)
        .env("PANDAFACE_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
pub fn ok(args: &[&str]) -> String {
    let o = pandaface(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Config for 64-pixel synthetic faces with a lighter registration budget.
pub fn fast_config(dir: &Path) -> PathBuf {
    let path = dir.join("fast.json");
    let json = ok(&["config"]);
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v["pipeline"]["face_height"] = 64.into();
    v["pipeline"]["cpd"]["max_points"] = 150.into();
    v["pipeline"]["cpd"]["max_iterations"] = 40.into();
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

/// Writes a small 64x64 synthetic dataset and returns its manifest.
pub fn small_dataset(dir: &Path, ids: usize, per_id: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("synth_{ids}_{per_id}_{seed}"));
    ok(&[
        "synth",
        "--out",
        s(&out),
        "--ids",
        &ids.to_string(),
        "--per-id",
        &per_id.to_string(),
        "--seed",
        &seed.to_string(),
        "--width",
        "64",
        "--height",
        "64",
    ]);
    out.join("manifest.csv")
}
