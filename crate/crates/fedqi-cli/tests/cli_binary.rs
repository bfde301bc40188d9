//! End-to-end smoke of the `fedqi` binary on the bundled MNIST data.

use std::path::PathBuf;
use std::process::Command;

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
fn run_subcommand_honors_config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.conf");
    // The file asks for 3 rounds; the flag below overrides to 2.
    std::fs::write(
        &config_path,
        "preset = mm5\nrounds = 3\nfolds = 1\nseed = 5\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_fedqi"))
        .arg("run")
        .arg("--config")
        .arg(&config_path)
        .args(["--rounds", "2"])
        .arg("--data-dir")
        .arg(mnist_dir())
        .arg("--out")
        .arg(&out_dir)
        .output()
        .expect("run fedqi");
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["config"]["rounds"], "2");
    assert_eq!(summary["config"]["participants"], "5");
    assert_eq!(summary["config"]["seed"], "5");
    assert_eq!(summary["folds"].as_array().unwrap().len(), 1);
    let rounds = std::fs::read_to_string(out_dir.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 1 + 2);
}

#[test]
fn invalid_config_lists_every_violation() {
    let output = Command::new(env!("CARGO_BIN_EXE_fedqi"))
        .args(["run", "--mode", "boost", "--participants", "0"])
        .output()
        .expect("run fedqi");
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("kappa"), "stderr: {stderr}");
    assert!(stderr.contains("participants"), "stderr: {stderr}");
}
