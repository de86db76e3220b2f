//! End-to-end checks of the binary: exit codes, error wording, and the
//! shape of an output bundle. Everything runs on a deliberately tiny
//! problem so the whole file stays fast in debug builds.

use std::path::Path;
use std::process::{Command, Output};

use ac_control_cli::io::sha256_hex;

const TINY_CONFIG: &str = "\
mesh.n_x = 8
mesh.n_y = 4
time.t_final = 0.1
time.n_t = 4
";

fn run_tool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acctl"))
        .args(args)
        .output()
        .expect("spawn acctl")
}

fn run_with_config(subcommand: &str, config: &str, dir: &Path) -> (Output, std::path::PathBuf) {
    let config_path = dir.join("run.conf");
    std::fs::write(&config_path, config).expect("write config");
    let out = dir.join("out");
    let output = run_tool(&[
        subcommand,
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    (output, out)
}

#[test]
fn solve_state_writes_the_declared_bundle() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (output, out) = run_with_config("solve-state", TINY_CONFIG, dir.path());
    assert!(output.status.success(), "solve-state failed: {output:?}");

    for name in [
        "config_echo.txt",
        "state_bulk.csv",
        "state_bulk.desc",
        "state_boundary.csv",
        "state_boundary.desc",
        "solve_report.txt",
        "manifest.txt",
    ] {
        assert!(out.join(name).exists(), "missing bundle file {name}");
    }

    let csv = std::fs::read_to_string(out.join("state_bulk.csv")).expect("read csv");
    assert_eq!(csv.lines().next(), Some("row,col,t_index,value"));

    let desc = std::fs::read_to_string(out.join("state_bulk.desc")).expect("read descriptor");
    assert!(desc.contains("time_convention = levels"));
    assert!(desc.contains("n_x = 8"));

    // Every manifest digest must match the bytes on disk.
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).expect("read manifest");
    let mut checked = 0;
    for line in manifest.lines() {
        let Some(rest) = line.strip_prefix("file = ") else {
            continue;
        };
        let (digest, rel) = rest.split_once("  ").expect("digest and path");
        assert_eq!(digest.len(), 64, "digest is not sha-256 hex: {line}");
        let bytes = std::fs::read(out.join(rel)).expect("read manifest entry");
        assert_eq!(digest, sha256_hex(&bytes), "stale digest for {rel}");
        checked += 1;
    }
    assert_eq!(checked, 6, "manifest must list every file except itself");
}

#[test]
fn mismatched_terminal_weights_name_the_assumption() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = format!("{TINY_CONFIG}cost.beta3 = 0.1\ncost.beta4 = 0.2\n");
    let (output, _) = run_with_config("optimize", &config, dir.path());
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("A6: beta3 != beta4"),
        "stderr does not name (A6): {stderr}"
    );
}

#[test]
fn unknown_keys_fail_with_their_line_number() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (output, _) = run_with_config("solve-state", "mesh.nx = 8\n", dir.path());
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("line 1: unknown key `mesh.nx`"),
        "stderr does not point at the offending line: {stderr}"
    );
}

#[test]
fn interior_initial_data_is_enforced() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = format!("{TINY_CONFIG}initial.kind = constant\ninitial.value = 1.0\n");
    let (output, _) = run_with_config("solve-state", &config, dir.path());
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("A2"),
        "stderr does not name (A2): {stderr}"
    );
}

#[test]
fn solver_failure_exits_with_code_two() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = format!(
        "{TINY_CONFIG}control.bulk = 80.0\nbounds.lower = -100\nbounds.upper = 100\n\
         bounds.lower_gamma = -100\nbounds.upper_gamma = 100\n"
    );
    let (output, _) = run_with_config("solve-state", &config, dir.path());
    assert_eq!(output.status.code(), Some(2), "solver failures must exit 2");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("error:"), "unexpected stderr: {stderr}");
}

#[test]
fn missing_config_file_is_a_validation_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("out");
    let output = run_tool(&[
        "solve-state",
        "--config",
        dir.path().join("absent.conf").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let output = run_tool(&["--help"]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    for sub in [
        "solve-state",
        "optimize",
        "check-gradient",
        "check-soc",
        "sweep-alpha",
        "audit-assumptions",
    ] {
        assert!(stdout.contains(sub), "help does not list {sub}");
    }
}
