//! Black-box tests of the `fedfrec` binary: artifact layout, determinism
//! across reruns and thread counts, resume behavior, and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedfrec"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn fedfrec")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "fedfrec {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

const SMALL_RUN: &str = r#"
seed = 7
num_clients_total = 40
clients_per_iteration = 10
num_iterations = 6

[initial_weights]
recency_weights = [100.0, 70.0, 50.0, 30.0, 10.0]
type_weights = [1.2, 0.5, 1.4]

[client]
pages_per_client = { uniform = { lo = 3, hi = 6 } }
searches_per_round = { fixed = 2 }

[stability]
sample_size = 4
trials = 5
"#;

#[test]
fn gen_data_writes_one_line_per_client_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
seed = 3
num_clients_total = 100
clients_per_iteration = 10

[client]
pages_per_client = { fixed = 50 }
"#,
    );

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let printed = run_ok(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    run_ok(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);

    let stdout = String::from_utf8(printed.stdout).unwrap();
    assert!(stdout.contains("100 client histories (5000 pages)"), "stdout: {stdout}");

    let bytes = read(&out_a.join("histories.jsonl"));
    assert_eq!(bytes, read(&out_b.join("histories.jsonl")));
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 100);

    // A different seed must produce different data.
    let out_c = dir.path().join("c");
    run_ok(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_c.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert_ne!(bytes, read(&out_c.join("histories.jsonl")));
}

#[test]
fn train_with_zero_iterations_only_writes_the_initial_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nnum_clients_total = 10\nclients_per_iteration = 2\nnum_iterations = 0\n");
    let out = dir.path().join("run");
    run_ok(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    assert!(out.join("snapshot-00000.json").exists());
    assert!(!out.join("snapshot-00001.json").exists());
    assert_eq!(read(&out.join("updates.jsonl")), b"");
    assert_eq!(
        fs::read_to_string(out.join("loss.csv")).unwrap(),
        "iteration,mean_loss,median_loss,num_updates,rolling5_loss\n"
    );
}

#[test]
fn training_artifacts_do_not_depend_on_rerun_or_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let cfg = cfg.to_str().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));

    run_ok(&["train", "--config", cfg, "--out", a.to_str().unwrap(), "--threads", "1"]);
    run_ok(&["train", "--config", cfg, "--out", b.to_str().unwrap(), "--threads", "2"]);
    run_ok(&["train", "--config", cfg, "--out", c.to_str().unwrap()]);

    for name in ["updates.jsonl", "loss.csv", "snapshot-00006.json", "snapshot-00003.json"] {
        let reference = read(&a.join(name));
        assert_eq!(reference, read(&b.join(name)), "{name} differs between thread counts");
        assert_eq!(reference, read(&c.join(name)), "{name} differs on rerun");
    }
}

#[test]
fn resumed_run_continues_into_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let full_cfg = write_config(dir.path(), SMALL_RUN);
    let full = dir.path().join("full");
    run_ok(&["train", "--config", full_cfg.to_str().unwrap(), "--out", full.to_str().unwrap()]);

    let half = SMALL_RUN.replace("num_iterations = 6", "num_iterations = 3");
    let half_cfg = dir.path().join("half.toml");
    fs::write(&half_cfg, half).unwrap();

    let split = dir.path().join("split");
    run_ok(&["train", "--config", half_cfg.to_str().unwrap(), "--out", split.to_str().unwrap()]);
    let resume_from = split.join("snapshot-00003.json");
    run_ok(&[
        "train",
        "--config",
        half_cfg.to_str().unwrap(),
        "--out",
        split.to_str().unwrap(),
        "--resume",
        resume_from.to_str().unwrap(),
        // The override must lose against the snapshot's recorded seed.
        "--seed",
        "12345",
    ]);

    for it in 0..=6 {
        let name = format!("snapshot-{it:05}.json");
        assert_eq!(read(&full.join(&name)), read(&split.join(&name)), "{name} differs");
    }
    for name in ["updates.jsonl", "loss.csv"] {
        assert_eq!(read(&full.join(name)), read(&split.join(name)), "{name} differs");
    }
}

#[test]
fn invalid_config_exits_1_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nnum_clients_total = 10\nclients_per_iteration = 2\nmystery_knob = 5\n");
    let out = dir.path().join("run");
    let result = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    assert_eq!(exit_code(&result), 1);
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("mystery_knob"), "stderr: {stderr}");
    assert!(!out.exists(), "output directory was created despite the bad config");
}

#[test]
fn semantically_invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // More clients per iteration than exist in the pool.
    let cfg = write_config(dir.path(), "seed = 1\nnum_clients_total = 5\nclients_per_iteration = 50\n");
    let out = dir.path().join("run");
    let result = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 1);
    assert!(!out.exists());
}

#[test]
fn missing_files_map_to_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");

    // Missing config: a configuration problem.
    let result = run(&["train", "--config", "/nonexistent.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(exit_code(&result), 1);

    let cfg = write_config(dir.path(), SMALL_RUN);
    // Missing resume snapshot: caught before anything runs.
    let result = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--resume",
        dir.path().join("absent.json").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 1);

    // Missing update log for the stability pass: a runtime failure.
    let result = run(&[
        "stability",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--log",
        dir.path().join("absent.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 2);

    // Unknown flags are usage errors.
    let result = run(&["train", "--config", cfg.to_str().unwrap(), "--no-such-flag"]);
    assert_eq!(exit_code(&result), 1);
}

#[test]
fn corrupt_artifacts_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let out = dir.path().join("run");

    let snap = dir.path().join("snapshot-broken.json");
    fs::write(&snap, "{\"format\": \"something-else\"}").unwrap();
    let result = run(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--snapshot",
        snap.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 2);

    let log = dir.path().join("broken.jsonl");
    fs::write(&log, "not json at all\n").unwrap();
    let result = run(&[
        "stability",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 2);
}

#[test]
fn evaluate_writes_the_expected_csv_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let cfg = cfg.to_str().unwrap();
    let train_out = dir.path().join("run");
    run_ok(&["train", "--config", cfg, "--out", train_out.to_str().unwrap()]);
    let snap = train_out.join("snapshot-00006.json");

    let (a, b) = (dir.path().join("eval-a"), dir.path().join("eval-b"));
    for out in [&a, &b] {
        run_ok(&[
            "evaluate",
            "--config",
            cfg,
            "--out",
            out.to_str().unwrap(),
            "--snapshot",
            snap.to_str().unwrap(),
        ]);
    }
    let text = fs::read_to_string(a.join("eval.csv")).unwrap();
    assert_eq!(read(&a.join("eval.csv")), read(&b.join("eval.csv")));

    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "arm,metric,mean,n,U,p,significant");
    // Three arms x two metrics of summaries, then six pairwise tests.
    assert_eq!(lines.len(), 13);
    assert_eq!(lines[1..7].iter().filter(|l| l.starts_with("treatment,")).count(), 2);
    assert!(lines[7..].iter().all(|l| l.contains("_vs_")));
}

#[test]
fn stability_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let cfg = cfg.to_str().unwrap();
    let train_out = dir.path().join("run");
    run_ok(&["train", "--config", cfg, "--out", train_out.to_str().unwrap()]);

    let out = dir.path().join("stab");
    run_ok(&[
        "stability",
        "--config",
        cfg,
        "--out",
        out.to_str().unwrap(),
        "--log",
        train_out.join("updates.jsonl").to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out.join("stability.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,mean_l1,std_l1");
    assert_eq!(lines.len(), 7, "expected one row per training iteration: {text}");
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{i},")), "row {i}: {line}");
    }
}

#[test]
fn thread_flag_rejects_zero() {
    let result = run(&["train", "--config", "x.toml", "--out", "y", "--threads", "0"]);
    assert_eq!(exit_code(&result), 1);
}
