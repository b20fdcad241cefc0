//! End-to-end runs of the `rfid-har` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PLANTED: &str = include_str!("../scenarios/planted.toml");

fn har(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfid-har"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = har(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn scenario(dir: &Path, name: &str, duration_s: f64) -> String {
    let text = PLANTED.replace("duration_s = 30.0", &format!("duration_s = {duration_s:.1}"));
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn every_run_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let sc = scenario(tmp.path(), "planted.toml", 30.0);

    let sim = |out: &str| ok(&["simulate", "--scenario", &sc, "--out", out, "--seed", "3"]);
    let (s1, s2) = (sim(&t("d1")), sim(&t("d1_again")));
    assert_eq!(
        String::from_utf8(s1).unwrap().replace("d1", ""),
        String::from_utf8(s2).unwrap().replace("d1_again", "")
    );
    assert_eq!(files(&tmp.path().join("d1")), files(&tmp.path().join("d1_again")));

    let d = t("d1");
    let train = |model: &str| ok(&["train", "--data", &d, "--out", model]);
    train(&t("m1.bin"));
    train(&t("m2.bin"));
    assert_eq!(std::fs::read(t("m1.bin")).unwrap(), std::fs::read(t("m2.bin")).unwrap());

    let runs: Vec<Vec<&str>> = vec![
        vec!["eval", "--data", &d, "--kfold", "5"],
        vec!["eval", "--data", &d, "--loso", "--normalize"],
        vec!["eval", "--data", &d, "--sweep-window", "2,5", "--folds", "3"],
        vec![
            "eval",
            "--data",
            &d,
            "--ablate-completion",
            "--windows",
            "2,5",
            "--folds",
            "3",
        ],
        vec!["select", "--data", &d, "--rho", "0.9", "--folds", "5"],
    ];
    for args in &runs {
        let first = ok(args);
        assert!(!first.is_empty(), "{args:?}");
        assert_eq!(first, ok(args), "{args:?}");
    }
}

#[test]
fn recognize_emits_one_line_per_window() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let sc = scenario(tmp.path(), "minute.toml", 60.0);
    ok(&["simulate", "--scenario", &sc, "--out", &t("d"), "--seed", "1"]);
    ok(&["train", "--data", &t("d"), "--out", &t("m.bin")]);
    let trace = tmp.path().join("d/traces/0000_idle_s0.csv");
    let layout = t("d/layout.txt");
    let args = [
        "recognize",
        "--model",
        &t("m.bin"),
        "--input",
        trace.to_str().unwrap(),
        "--layout",
        &layout,
    ];
    let out = String::from_utf8(ok(&args)).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 12, "{out}");
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], ((i as i64 + 1) * 5000).to_string());
        assert!(["idle", "wave", "swing"].contains(&fields[1]));
        assert!(fields[2].parse::<u32>().unwrap() <= 2);
    }
    assert_eq!(out.as_bytes(), ok(&args).as_slice());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    assert_eq!(har(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(har(&["--help"]).status.code(), Some(0));
    assert_eq!(
        har(&["recognize", "--model", &t("missing.bin"), "--input", "-"])
            .status
            .code(),
        Some(2)
    );

    let sc = scenario(tmp.path(), "short.toml", 3.0);
    ok(&["simulate", "--scenario", &sc, "--out", &t("d"), "--seed", "2"]);
    ok(&["train", "--data", &t("d"), "--out", &t("m.bin"), "--window", "1"]);
    let bench = |slow: &str| {
        har(&[
            "bench",
            "--model",
            &t("m.bin"),
            "--data",
            &t("d"),
            "--windows",
            "1",
            "--slowdown-ms",
            slow,
        ])
    };
    assert_eq!(bench("0").status.code(), Some(0));
    let slow = bench("1100");
    assert_eq!(slow.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&slow.stdout).contains("real_time=fail"));
}
