//! End-to-end checks of the command-line binary: exit codes, export files,
//! and stdout structure.

use std::path::Path;
use std::process::{Command, Output};

use mbpg::env::TabularMdp;
use mbpg::harness::{rows_from_csv, CSV_HEADER};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbpg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_mdp(dir: &Path) -> String {
    let path = dir.join("mdp.json");
    std::fs::write(
        &path,
        serde_json::to_string(&TabularMdp::two_state_example()).unwrap(),
    )
    .unwrap();
    format!("tabular:{}", path.display())
}

#[test]
fn help_and_version_exit_zero() {
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8(help.stdout).unwrap();
    for flag in [
        "--algo", "--env", "--probes", "--seeds", "--config", "--out",
    ] {
        assert!(text.contains(flag), "help text lists {flag}");
    }
}

#[test]
fn successful_run_exports_csv_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let env = write_mdp(dir.path());
    let out = dir.path().join("curve.csv");
    let result = run(&[
        "--env",
        &env,
        "--algo",
        "is-mbpg",
        "--probes",
        "600",
        "--batch",
        "2",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));

    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("algo=is-mbpg"));
    assert!(stdout.contains("seed 7:"));
    assert!(stdout.contains(&format!("wrote {}", out.display())));

    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    let rows = rows_from_csv(&text).unwrap();
    assert!(!rows.is_empty());
    assert_eq!(rows[0].iteration, 1);
    assert_eq!(rows[0].beta, 1.0);
    assert!(rows.last().unwrap().system_probes >= 600);
}

#[test]
fn seed_suite_writes_one_file_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let env = write_mdp(dir.path());
    let out = dir.path().join("suite.csv");
    let result = run(&[
        "--env",
        &env,
        "--algo",
        "is-mbpg-star",
        "--probes",
        "300",
        "--batch",
        "2",
        "--seeds",
        "3,4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    assert!(!out.exists(), "multi-seed export uses suffixed names only");
    for seed in [3, 4] {
        let path = dir.path().join(format!("suite_seed{seed}.csv"));
        assert!(path.exists(), "missing {}", path.display());
        let rows = rows_from_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(!rows.is_empty());
    }
}

#[test]
fn json_export_round_trips_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let env = write_mdp(dir.path());
    let out = dir.path().join("suite.json");
    let result = run(&[
        "--env",
        &env,
        "--algo",
        "ha-mbpg",
        "--probes",
        "300",
        "--batch",
        "2",
        "--seeds",
        "1,2",
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    let records = mbpg::harness::records_from_json_file(&out).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].metadata.seed, 1);
    assert_eq!(records[1].metadata.seed, 2);
    for record in &records {
        assert!(record.metadata.env.contains("tabular"));
        assert!(!record.rows.is_empty());
    }
}

#[test]
fn unknown_flag_exits_one() {
    let result = run(&["--no-such-flag"]);
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn invalid_value_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let env = write_mdp(dir.path());
    let result = run(&["--env", &env, "--batch", "0"]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.contains("config error"), "stderr: {stderr}");
}

#[test]
fn missing_environment_file_is_a_config_error() {
    let result = run(&["--env", "tabular:/no/such/file.json", "--probes", "100"]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.contains("config error"), "stderr: {stderr}");
}

#[test]
fn diverging_run_exits_two_and_reports_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let env = write_mdp(dir.path());
    // An absurd step-size numerator blows the parameter norm past the
    // divergence guard within a few iterations.
    let result = run(&[
        "--env", &env, "--algo", "is-mbpg", "--k", "1e9", "--probes", "600", "--batch", "2",
        "--seed", "5",
    ]);
    assert_eq!(result.status.code(), Some(2));
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("FAILED"), "stdout: {stdout}");
    assert!(stdout.contains("diverged"), "stdout: {stdout}");
}

#[test]
fn config_file_drives_a_run_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let env = write_mdp(dir.path());
    let cfg_path = dir.path().join("run.json");
    std::fs::write(
        &cfg_path,
        format!(
            r#"{{"algo": "is-mbpg-star", "env": "{env}", "probes": 300, "batch": 2, "seed": 9}}"#
        ),
    )
    .unwrap();
    let out = dir.path().join("from_config.csv");

    // File alone.
    let result = run(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("algo=is-mbpg-star"));
    assert!(stdout.contains("seed 9:"));

    // A flag overrides the file's value for the same key.
    let result = run(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "--algo",
        "vanilla-pg",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0));
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("algo=vanilla-pg"));
}
