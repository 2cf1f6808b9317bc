//! Process-level checks of the `ulm` executable: exit statuses, the
//! single-line error contract, effective-configuration echoing, and
//! deterministic regeneration.

use std::path::PathBuf;
use std::process::{Command, Output};

fn ulm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ulm"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn config_output_feeds_back_unchanged() {
    let first = ulm(&["config", "--profile", "desk"]);
    assert!(first.status.success());
    assert!(first.stderr.is_empty());

    let dir = temp_dir("ulm_cli_roundtrip");
    let path = dir.join("echoed.toml");
    std::fs::write(&path, &first.stdout).unwrap();
    let second = ulm(&["config", "--config", path.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(second.stdout, first.stdout);

    let paper = ulm(&["config", "--profile", "paper"]);
    assert!(paper.status.success());
    assert_ne!(paper.stdout, first.stdout);
}

#[test]
fn stage_commands_echo_the_effective_configuration() {
    let dir = temp_dir("ulm_cli_genvasc");
    let out = dir.to_str().unwrap();
    let run = ulm(&["genvasc", "--threads", "1", "--seed", "11", "--out", out]);
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.starts_with("# effective configuration\n"));
    assert!(stdout.contains("# end configuration\n"));
    assert!(stdout.contains("seed = 11"));
    assert!(stdout.contains("genvasc: wrote"));
    assert!(dir.join("graph_train.txt").is_file());
    assert!(dir.join("graph_holdout.txt").is_file());

    // Identical inputs and seed reproduce identical bytes.
    let before = std::fs::read(dir.join("graph_train.txt")).unwrap();
    let again = ulm(&["genvasc", "--threads", "1", "--seed", "11", "--out", out]);
    assert!(again.status.success());
    assert_eq!(std::fs::read(dir.join("graph_train.txt")).unwrap(), before);

    let moved = ulm(&["genvasc", "--threads", "1", "--seed", "12", "--out", out]);
    assert!(moved.status.success());
    assert_ne!(std::fs::read(dir.join("graph_train.txt")).unwrap(), before);
}

#[test]
fn failures_exit_nonzero_with_one_stderr_line() {
    let dir = temp_dir("ulm_cli_missing_inputs");
    // No dataset was generated, so training must refuse.
    let run = ulm(&["train", "--out", dir.to_str().unwrap()]);
    assert!(!run.status.success());
    let stderr = String::from_utf8(run.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("ulm: error: train: "), "stderr: {stderr}");

    let bad_flag = ulm(&["train", "--bogus"]);
    assert!(!bad_flag.status.success());

    let bad_profile = ulm(&["config", "--profile", "tabletop"]);
    assert!(!bad_profile.status.success());
}

/// Desk profile scaled down to a couple of tiny blocks so the dataset stage
/// finishes in seconds.
fn tiny_desk_config() -> String {
    let mut cfg = ulm_core::config::RunConfig::desk();
    cfg.dataset.n_blocks = 2;
    cfg.dataset.n_t = 64;
    cfg.dataset.block_n_z = 8;
    cfg.dataset.block_n_x = 8;
    cfg.dataset.psf_patch = [5, 5];
    cfg.evaluation.densities_per_mm3 = vec![5.0];
    cfg.evaluation.n_blocks = 2;
    cfg.evaluation.scored_blocks = 1;
    cfg.evaluation.checkpoints = vec![1, 2];
    cfg.validate().expect("tiny config is coherent");
    cfg.effective_toml()
}

#[test]
fn failed_stages_remove_their_partial_outputs() {
    let dir = temp_dir("ulm_cli_cleanup");
    let cfg_path = dir.join("run.toml");
    std::fs::write(&cfg_path, tiny_desk_config()).unwrap();

    let out = dir.join("out");
    let out_s = out.to_str().unwrap();
    let cfg_s = cfg_path.to_str().unwrap();
    assert!(ulm(&["genvasc", "--config", cfg_s, "--out", out_s]).status.success());
    // With the holdout graph gone, the dataset stage fails after it already
    // wrote the training set; the partial training set must not survive.
    std::fs::remove_file(out.join("graph_holdout.txt")).unwrap();
    let failed = ulm(&["dataset", "--config", cfg_s, "--out", out_s]);
    assert!(!failed.status.success());
    let stderr = String::from_utf8(failed.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("ulm: error: dataset: "), "stderr: {stderr}");
    assert!(!out.join("dataset").exists(), "partial dataset left behind");
    assert!(!out.join("eval_d5").exists(), "partial eval dir left behind");
}
