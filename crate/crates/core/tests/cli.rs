use std::path::Path;
use std::process::{Command, Output};

use dance_core::io::{read_artifact, read_dataset};
use dance_core::ReferenceMode;

fn dance(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dance"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn dance")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth(dir: &Path, name: &str, per_class: &str, seed: &str) {
    ok(&dance(
        &[
            "synth",
            "--classes",
            "3",
            "--dim",
            "4",
            "--per-class",
            per_class,
            "--seed",
            seed,
            "--out",
            name,
        ],
        dir,
    ));
}

#[test]
fn synth_fit_calibrate_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "support.dnce", "60", "1");
    synth(dir, "cal.dnce", "60", "2");
    synth(dir, "query.csv", "5", "3");
    assert_eq!(read_dataset(dir.join("cal.dnce")).unwrap().len(), 180);

    ok(&dance(
        &["fit", "--data", "support.dnce", "--budget", "4", "--out", "model.dncm"],
        dir,
    ));
    ok(&dance(
        &[
            "calibrate",
            "--model",
            "model.dncm",
            "--cal",
            "cal.dnce",
            "--lambda",
            "0.5",
            "--out",
            "reuse.json",
        ],
        dir,
    ));
    let art = read_artifact(dir.join("reuse.json")).unwrap();
    assert_eq!(art.mode, ReferenceMode::Reuse);
    assert_eq!(art.lambda, 0.5);

    ok(&dance(
        &[
            "calibrate",
            "--model",
            "model.dncm",
            "--cal",
            "cal.dnce",
            "--reference",
            "support.dnce",
            "--mode",
            "disjoint",
            "--out",
            "disjoint.json",
        ],
        dir,
    ));
    let art = read_artifact(dir.join("disjoint.json")).unwrap();
    assert_eq!(art.mode, ReferenceMode::Disjoint);
    assert!((0.0..=1.0).contains(&art.lambda));

    let out = dance(
        &[
            "predict",
            "--model",
            "model.dncm",
            "--artifact",
            "reuse.json",
            "--reference",
            "cal.dnce",
            "--data",
            "query.csv",
        ],
        dir,
    );
    ok(&out);
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 15);
    for (i, line) in lines.iter().enumerate() {
        assert_eq!(line["row"], i);
        let set = line["set"].as_array().unwrap();
        assert!(set.iter().all(|y| y.as_u64().unwrap() < 3));
    }
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(
        dance(&["evaluate", "--alpha", "1.5", "--out", "r.json"], dir)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        dance(&["evaluate", "--lambda", "2", "--out", "r.json"], dir)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        dance(&["evaluate", "--methods", "nope", "--out", "r.json"], dir)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(dance(&["evaluate", "--no-such-flag"], dir).status.code(), Some(1));
    assert_eq!(dance(&[], dir).status.code(), Some(1));

    synth(dir, "cal.dnce", "40", "2");
    let out = dance(
        &[
            "calibrate",
            "--model",
            "m",
            "--cal",
            "cal.dnce",
            "--mode",
            "disjoint",
            "--out",
            "a.json",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2), "missing model file is an I/O error");
    std::fs::write(dir.join("bad.dnce"), b"DNCEgarbage").unwrap();
    assert_eq!(
        dance(&["fit", "--data", "bad.dnce", "--out", "m"], dir).status.code(),
        Some(1)
    );
}

#[test]
fn io_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dance(&["fit", "--data", "missing.dnce", "--out", "m.dncm"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dance(&["--help"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mc-validate"));
}

#[test]
fn thread_override_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dance"))
        .current_dir(tmp.path())
        .env("DANCE_THREADS", "zero")
        .args(["synth", "--out", "x.dnce"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn mc_validate_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&dance(
        &[
            "mc-validate",
            "--classes",
            "3",
            "--dim",
            "4",
            "--per-class",
            "150",
            "--budget",
            "4",
            "--trials",
            "5",
            "--methods",
            "dance,knn_only",
            "--lambda",
            "0.5",
            "--out",
            "mc.json",
        ],
        dir,
    ));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("mc.json")).unwrap()).unwrap();
    let methods = doc["summary"]["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 2);
    assert_eq!(methods[0]["trials"].as_array().unwrap().len(), 5);
}
