//! End-to-end runs of the `sit` binary.

use std::path::Path;
use std::process::{Command, Output};

fn sit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sit")).args(args).output().expect("spawn sit")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_encode_decode_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("clip.y4m");
    let bin = dir.path().join("clip.sit");
    let out = dir.path().join("out.y4m");
    let csv = dir.path().join("rates.csv");

    let r = sit(&["synth", "translating", "-o", path(&clip), "--width", "48", "--height", "32", "--frames", "9"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let r = sit(&["--set", "gop_length=9", "encode", path(&clip), "-o", path(&bin), "--report", path(&csv)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(report.lines().count(), 10);

    let r = sit(&["decode", path(&bin), "-o", path(&out), "--refine"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let r = sit(&["metrics", path(&clip), path(&out)]);
    assert!(r.status.success());
    assert!(!r.stdout.is_empty());

    let r = sit(&["inspect", path(&bin)]);
    assert!(String::from_utf8_lossy(&r.stdout).starts_with("SIT1 v1 9 frames (9 coded)"));
}

#[test]
fn exit_codes_separate_usage_data_and_experiment_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sit(&["--set", "no_such_key=1", "inspect", "x"]).status.code(), Some(1));

    let junk = dir.path().join("junk.sit");
    std::fs::write(&junk, b"SIT1 but not really").unwrap();
    assert_eq!(sit(&["inspect", path(&junk)]).status.code(), Some(2));
    assert_eq!(
        sit(&["decode", path(&dir.path().join("missing.sit")), "-o", path(&dir.path().join("o.y4m"))]).status.code(),
        Some(2)
    );

    assert_eq!(sit(&["exp", "chain", "--k-max", "1", "--width", "32", "--height", "32"]).status.code(), Some(3));
}
