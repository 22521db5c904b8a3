mod common;

use std::fs;

use common::*;

#[test]
fn enroll_identify_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let manifest = small_dataset(dir.path(), 3, 2, 5);
    let gallery = dir.path().join("g.gal");
    let out = ok(&["--config", s(&cfg), "enroll", "--manifest", s(&manifest), "--gallery", s(&gallery)]);
    assert!(out.starts_with("enrolled 6 entries\n"), "{out}");
    assert!(out.contains("panda_02\t2"));

    let probe = manifest.parent().unwrap().join("images/panda_01_00.png");
    let out = ok(&["identify", "--gallery", s(&gallery), s(&probe)]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "panda_01");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("panda_01\t"));
    let ranked: Vec<f64> = lines[1..].iter().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!(ranked.windows(2).all(|w| w[0] >= w[1]));

    let out = ok(&["verify", "--gallery", s(&gallery), s(&probe), "--claim", "panda_01", "--threshold", "0"]);
    assert!(out.starts_with("accept\t"), "{out}");
    let out = ok(&["verify", "--gallery", s(&gallery), s(&probe), "--claim", "panda_00", "--threshold", "0"]);
    assert!(out.starts_with("reject\t"), "{out}");
    let o = pandaface(&["verify", "--gallery", s(&gallery), s(&probe), "--claim", "nobody", "--threshold", "0"]);
    assert!(!o.status.success());

    let flat = dir.path().join("flat.png");
    image::RgbImage::from_pixel(64, 64, image::Rgb([128, 128, 128])).save(&flat).unwrap();
    let o = pandaface(&["identify", "--gallery", s(&gallery), s(&flat)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no finite score"), "{}", stderr(&o));

    let mut bytes = fs::read(&gallery).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let corrupt = dir.path().join("corrupt.gal");
    fs::write(&corrupt, &bytes).unwrap();
    let o = pandaface(&["identify", "--gallery", s(&corrupt), s(&probe)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checksum mismatch"), "{}", stderr(&o));
}

#[test]
fn missing_image_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 2, 2, 3);
    let victim = manifest.parent().unwrap().join("images/panda_01_01.png");
    fs::remove_file(&victim).unwrap();
    let o = pandaface(&["enroll", "--manifest", s(&manifest), "--gallery", s(&dir.path().join("g.gal"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("panda_01_01.png"), "{}", stderr(&o));
    assert!(!dir.path().join("g.gal").exists());
}

#[test]
fn closed_set_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 2, 2, 3);
    let text = fs::read_to_string(&manifest).unwrap();
    let trimmed: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
    fs::write(&manifest, trimmed).unwrap();
    let gallery = dir.path().join("g.gal");
    let o = pandaface(&["enroll", "--manifest", s(&manifest), "--gallery", s(&gallery), "--require-closed-set"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("closed-set violation"), "{}", stderr(&o));

    let o = pandaface(&["evaluate", "--manifest", s(&manifest), "--out", s(&dir.path().join("r"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("panda_01"), "{}", stderr(&o));
}

#[test]
fn config_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["--seed", "7", "--threads", "2", "config", "--out", s(&a)]);
    ok(&["--config", s(&a), "config", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ok(&["--config", s(&a), "config"]).as_bytes(), fs::read(&a).unwrap());

    let text = fs::read_to_string(&a).unwrap().replacen("\"seed\"", "\"sede\"", 1);
    fs::write(&a, text).unwrap();
    let o = pandaface(&["--config", s(&a), "config"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));

    let o = pandaface(&["--threads", "0", "config"]);
    assert!(!o.status.success());
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_dataset(&dir.path().join("a"), 2, 3, 9);
    let b = small_dataset(&dir.path().join("b"), 2, 3, 9);
    let rows = fs::read_to_string(&a).unwrap();
    assert_eq!(rows.lines().count(), 7);
    assert_eq!(rows, fs::read_to_string(&b).unwrap());
    for line in rows.lines().skip(1) {
        let rel = line.split(',').next().unwrap();
        let pa = fs::read(a.parent().unwrap().join(rel)).unwrap();
        let pb = fs::read(b.parent().unwrap().join(rel)).unwrap();
        assert_eq!(pa, pb, "{rel}");
    }
}

#[test]
fn evaluate_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path());
    let manifest = small_dataset(dir.path(), 3, 2, 12);
    let run = |name: &str, cache: bool| {
        let out = dir.path().join(name);
        let mut args = vec!["--config", s(&cfg), "--threads", "1", "evaluate", "--manifest", s(&manifest)];
        args.extend(["--out", s(&out), "--far", "0.05"]);
        if cache {
            args.push("--cache-alignments");
        }
        let printed = ok(&args);
        assert!(printed.contains("TAR@1%FAR: "), "{printed}");
        assert!(printed.contains("rank-1: "), "{printed}");
        out
    };
    let a = run("a", true);
    let b = run("b", true);
    let c = run("c", false);
    for f in ["scores.csv", "roc.csv", "summary.json"] {
        let fa = fs::read(a.join(f)).unwrap();
        assert_eq!(fa, fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(fa, fs::read(c.join(f)).unwrap(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["probes"], 6);
    assert!(summary["tar_at_far"]["0.05"].is_number());
    assert!(summary["tar_at_far"]["0.01"].is_number());
    assert_eq!(summary["genuine_count"], 6);
    assert_eq!(summary["impostor_count"], 12);
    let timing: serde_json::Value = serde_json::from_slice(&fs::read(a.join("timing.json")).unwrap()).unwrap();
    assert_eq!(timing["threads"], 1);

    let o = pandaface(&["evaluate", "--manifest", s(&manifest), "--out", s(&dir.path().join("d")), "--far", "1.5"]);
    assert!(!o.status.success());
}
