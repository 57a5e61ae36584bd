//! End-to-end runs of the `ng` binary.

use std::path::Path;
use std::process::{Command, Output};

fn ng(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ng")).args(args).env("NG_THREADS", "2").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn final_phase_writes_table_and_fit_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ng(&["final", "--n-grid", "16,32,64", "--reps", "10", "--seed", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("fit T_c ~ ln n"));
    let table = dir.path().join("final-phase.csv");
    assert!(table.exists() && dir.path().join("final-phase.meta.json").exists());
    let fit = ng(&["fit", table.to_str().unwrap(), "--y", "T_c"]);
    assert_eq!(fit.status.code(), Some(0));
    let parsed: serde_json::Value = serde_json::from_slice(&fit.stdout).unwrap();
    assert_eq!(parsed["groups"], 3);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        let o = ng(&["sim-full", "--n-grid", "8,16", "--reps", "20", "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |d: &Path| std::fs::read(d.join("early-phase.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn spec_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"kind":"middle-phase","n_grid":[20],"reps":3,"seed":5,"horizon":2.0,"snapshot_dt":0.5}"#)
        .unwrap();
    let out = dir.path().join("out");
    let o = ng(&[
        "sim-full",
        "--phase",
        "middle",
        "--spec",
        spec.to_str().unwrap(),
        "--reps",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("reps=4"));
    let snaps = std::fs::read_to_string(out.join("middle-phase-snapshots.csv")).unwrap();
    // 4 replicates × 5 grid points plus the header
    assert_eq!(snaps.lines().count(), 21);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(ng(&["final"]).status.code(), Some(2));
    assert_eq!(ng(&["final", "--n", "10", "--mode", "sideways"]).status.code(), Some(2));
    assert_eq!(ng(&["final", "--n-grid", "10,5"]).status.code(), Some(2));
    assert_eq!(ng(&["fit", "/nonexistent/table.csv", "--y", "T_c"]).status.code(), Some(2));
    assert_eq!(ng(&["bogus-verb"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"kind":"final-phase","n_grid":[8],"reps":1,"seed":0}"#).unwrap();
    assert_eq!(ng(&["ode", "--spec", spec.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn equivalence_verb_passes_at_small_n() {
    let o = ng(&["equivalence", "--n-grid", "3,4", "--reps", "3000", "--y0", "0.25"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("pass ").count(), 4);
}
