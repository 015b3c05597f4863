use std::path::{Path, PathBuf};
use std::process::Command;

use cascade_cli::ScenarioFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cascade-forward"))
}

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// The shipped scalar scenario shortened to keep debug runs quick.
fn short_scalar(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(shipped("scalar_paper.example")).unwrap();
    let path = dir.join("short.scenario");
    std::fs::write(&path, text.replace("t_final = 60", "t_final = 4").replace("cells = 200", "cells = 60")).unwrap();
    path
}

#[test]
fn shipped_scenario_parses() {
    let text = std::fs::read_to_string(shipped("scalar_paper.example")).unwrap();
    let (file, warnings) = ScenarioFile::parse(&text, false).unwrap();
    assert!(warnings.is_empty());
    let (again, _) = ScenarioFile::parse(&file.to_text(), false).unwrap();
    assert_eq!(file, again);
}

#[test]
fn run_succeeds_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let status = bin().args(["run"]).arg(short_scalar(dir.path())).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let audits = std::fs::read_to_string(out.join("audits.txt")).unwrap();
    assert!(audits.contains("overall PASS"), "{audits}");
    let header = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(header.starts_with("t,z_1,u_1,sigma_u_1,norm_z,norm_w_H,V"));
}

#[test]
fn dissipativity_violation_exits_3_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let path = shipped("dissipativity_violation.example");
    let out = bin().arg("run").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dissipative FAIL"));
    let forced = bin().arg("run").arg(&path).arg("--out").arg(dir.path()).arg("--force").output().unwrap();
    assert_ne!(forced.status.code(), Some(3));
}

#[test]
fn sabotage_reports_failed_decay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let status =
        bin().arg("run").arg(short_scalar(dir.path())).arg("--out").arg(&out).arg("--sabotage").status().unwrap();
    assert_eq!(status.code(), Some(0));
    let audits = std::fs::read_to_string(out.join("audits.txt")).unwrap();
    assert!(audits.lines().any(|l| l.starts_with("decay FAIL")), "{audits}");
    let re = bin().arg("audit").arg(&out).output().unwrap();
    assert!(String::from_utf8_lossy(&re.stdout).starts_with("decay FAIL"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("env");
    let status =
        bin().arg("run").arg(short_scalar(dir.path())).env("CASCADE_FORWARD_OUT", &env_out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(env_out.join("trace.csv").exists());
    let flag_out = dir.path().join("flag");
    bin()
        .arg("run")
        .arg(short_scalar(dir.path()))
        .arg("--out")
        .arg(&flag_out)
        .env("CASCADE_FORWARD_OUT", &env_out)
        .status()
        .unwrap();
    assert!(flag_out.join("trace.csv").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    std::fs::write(&bad, "[plant]\nkind = transport_scalar\na = 1\nlambda = 1\nc = 1\n[grid]\ncells = -3\n").unwrap();
    let out = bin().arg("run").arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.cells"));

    let two = bin().arg("converge").arg(short_scalar(dir.path())).args(["--grids", "100,200"]).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(two.code(), Some(2));

    let system = dir.path().join("sys.scenario");
    std::fs::write(
        &system,
        "[plant]\nkind = transport_system\nA = -1\nB = 1\nC = 1\nspeeds = 1, -1\nD0 = 1\nE0 = 1\n\
         [sylvester]\nmethod = closed\n[sim]\nt_final = 1\n[init]\nz0 = 1\n",
    )
    .unwrap();
    let closed = bin().arg("converge").arg(&system).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(closed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&closed.stderr).contains("closed form"));

    let unknown = dir.path().join("unknown.scenario");
    std::fs::write(&unknown, "[plant]\nkind = transport_scalar\na = 1\nlambda = 1\nc = 1\ncolour = red\n[sim]\nt_final = 1\n[init]\nz0 = 0\n").unwrap();
    assert_eq!(bin().arg("run").arg(&unknown).arg("--out").arg(dir.path()).status().unwrap().code(), Some(2));
    let lenient = bin().arg("run").arg(&unknown).arg("--out").arg(dir.path()).arg("--lenient").output().unwrap();
    assert_eq!(lenient.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&lenient.stderr).contains("warning"));
}

#[test]
fn numerical_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    // anti-stable A: no positive-definite Lyapunov solution
    let path = dir.path().join("antistable.scenario");
    std::fs::write(
        &path,
        "[plant]\nkind = transport_scalar\na = -40\nlambda = 1\nc = 1\n[sim]\nt_final = 1\n[init]\nz0 = 1\n",
    )
    .unwrap();
    let out = bin().arg("run").arg(&path).arg("--out").arg(dir.path()).arg("--force").output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solve_lyapunov"));

    // reflection gain 1000 at x = 1 blows the transport up within the horizon
    let path = dir.path().join("blowup.scenario");
    std::fs::write(
        &path,
        "[plant]\nkind = transport_system\nA = -1\nB = 1\nC = 1\nspeeds = 50, -50\nD0 = 1\nD1 = 1000\nE0 = 1\n\
         [grid]\ncells = 8\n[sim]\nt_final = 20\n[init]\nz0 = 1\nw0 = constant 1\n",
    )
    .unwrap();
    let out = bin().arg("run").arg(&path).arg("--out").arg(dir.path()).arg("--force").output().unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
    assert!(dir.path().join("abort.txt").exists());
}

#[test]
fn probe_and_converge_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = short_scalar(dir.path());
    let probe = bin().arg("probe").arg(&path).args(["--modes", "2"]).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(probe.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(dir.path().join("probe.csv")).unwrap().lines().count(), 6);
    let conv = bin().arg("converge").arg(&path).args(["--grids", "20,40,80"]).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(conv.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&conv.stdout).contains("gain_order"));
}
