//! End-to-end tests of the quadpolicy binary: exit codes, output files,
//! and run-to-run determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use quadpolicy::export::save_weights;
use quadpolicy::nn::{Activation, Mlp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quadpolicy"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small-but-valid training configuration so the smoke tests finish in
/// seconds: short episodes, tiny nets, a handful of steps.
fn tiny_train_config() -> String {
    r#"
seed = 11

[env]
action_history = 4
episode_steps = 40

[td3]
total_steps = 600
warmup_steps = 200
batch_size = 32
buffer_capacity = 2000
hidden = [8, 8]
eval_interval = 300
eval_episodes = 1
seed = 11
"#
    .to_string()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn random_actor(obs_dim: usize) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    Mlp::new(
        &[obs_dim, 8, 4],
        &[Activation::Tanh, Activation::Linear],
        &mut rng,
    )
    .unwrap()
}

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[td3]\nlerning_rate = 0.1\n");
    let out = run(&["--config", &cfg, "simulate", "--duration", "0.1"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("lerning_rate"), "{}", stderr(&out));
}

#[test]
fn invalid_config_value_exits_2_with_section_prefix() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[td3]\ngamma = 1.5\n");
    let out = run(&["--config", &cfg, "simulate", "--duration", "0.1"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("[td3]"), "{}", stderr(&out));
}

#[test]
fn missing_weights_file_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "evaluate",
        "--weights",
        "/nonexistent/weights.qpw",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn corrupt_weights_file_exits_3() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.qpw");
    fs::write(&bad, b"not a weights file at all").unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "export",
        "--weights",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn train_smoke_writes_outputs_and_is_deterministic() {
    let dir_a = TempDir::new().unwrap();
    let dir_b = TempDir::new().unwrap();
    let cfg = write_config(dir_a.path(), &tiny_train_config());

    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "--config",
            &cfg,
            "--out",
            dir.path().to_str().unwrap(),
            "train",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        for file in ["resolved.toml", "curve.csv", "actor_final.qpw", "ckpt_final.qpc"] {
            assert!(dir.path().join(file).exists(), "missing {file}");
        }
    }

    let curve_a = fs::read(dir_a.path().join("curve.csv")).unwrap();
    let curve_b = fs::read(dir_b.path().join("curve.csv")).unwrap();
    assert_eq!(curve_a, curve_b, "same seed must give identical curves");

    let text = String::from_utf8(curve_a).unwrap();
    // 600 steps with an eval every 300 → header plus two rows.
    assert_eq!(text.lines().count(), 3, "{text}");
    assert!(text.starts_with("step,mean_return,mean_pos_error,critic_loss,actor_loss"));
}

#[test]
fn train_steps_flag_overrides_config_and_is_echoed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &tiny_train_config());
    let out = run(&[
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
        "train",
        "--steps",
        "300",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let resolved = fs::read_to_string(dir.path().join("resolved.toml")).unwrap();
    assert!(resolved.contains("total_steps = 300"), "{resolved}");
    // 300 steps with eval_interval 300 → exactly one curve row.
    let curve = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2, "{curve}");
}

#[test]
fn defaults_apply_when_config_sections_are_missing() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "seed = 5\n");
    let out = run(&[
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
        "simulate",
        "--duration",
        "0.1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let echoed = stdout(&out);
    // Defaulted [td3] section is echoed in full despite being absent
    // from the input file.
    assert!(echoed.contains("batch_size = 256"), "{echoed}");
    assert!(echoed.contains("seed = 5"), "{echoed}");
}

#[test]
fn simulate_hover_stays_put() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "simulate",
        "--duration",
        "1.0",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("sim.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let fields: Vec<f64> = last.split(',').map(|t| t.parse().unwrap()).collect();
    // Constant hover setpoints from the hover state: position holds
    // (0, 0, 1) to integrator precision.
    assert!(fields[1].abs() < 1e-6, "{last}");
    assert!(fields[2].abs() < 1e-6, "{last}");
    assert!((fields[3] - 1.0).abs() < 1e-6, "{last}");
}

#[test]
fn simulate_rejects_malformed_rpm_list() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "simulate",
        "--rpm",
        "1000,2000",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn export_generates_c_source_with_checksum() {
    let dir = TempDir::new().unwrap();
    let weights = dir.path().join("actor.qpw");
    save_weights(&random_actor(146), &weights).unwrap();

    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "export",
        "--weights",
        weights.to_str().unwrap(),
        "--precision",
        "f32",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let source = fs::read_to_string(dir.path().join("policy_f32.c")).unwrap();
    assert!(source.contains("policy_forward"), "{source}");
    assert!(stdout(&out).contains("sha256"), "{}", stdout(&out));
}

#[test]
fn evaluate_writes_per_episode_logs_and_metrics() {
    let dir = TempDir::new().unwrap();
    let weights = dir.path().join("actor.qpw");
    save_weights(&random_actor(146), &weights).unwrap();

    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "evaluate",
        "--weights",
        weights.to_str().unwrap(),
        "--trajectory",
        "hover",
        "--episodes",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("track_000.csv").exists());
    assert!(dir.path().join("track_001.csv").exists());
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "{metrics}");
}

#[test]
fn evaluate_rejects_mismatched_weights() {
    let dir = TempDir::new().unwrap();
    let weights = dir.path().join("small.qpw");
    save_weights(&random_actor(10), &weights).unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "evaluate",
        "--weights",
        weights.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn compare_with_pid_only_produces_report() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "compare",
        "--controllers",
        "pid",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(report.lines().count() >= 2, "{report}");
    assert!(dir.path().join("track_pid.csv").exists());
    assert!(stdout(&out).contains("pid"), "{}", stdout(&out));
}

#[test]
fn compare_policy_without_weights_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "--out",
        dir.path().to_str().unwrap(),
        "compare",
        "--controllers",
        "policy",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
