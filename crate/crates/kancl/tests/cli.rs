//! End-to-end tests of the `kancl` binary: exit codes, file outputs, dotted
//! overrides, and run-to-run determinism, all on the synthetic dataset so no
//! downloads are involved.

use std::path::Path;
use std::process::{Command, Output};

use kancl::continual::RunRecord;

fn kancl(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kancl"));
    cmd.args(args);
    cmd.env_remove("DATA_ROOT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn kancl")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn write_config(dir: &Path, seeds: &[u64]) -> std::path::PathBuf {
    let path = dir.join("exp.json");
    let doc = serde_json::json!({
        "out_dir": dir.join("runs"),
        "seeds": seeds,
        "scenarios": [{
            "name": "tiny",
            "dataset": "synthetic",
            "synthetic": {"classes": 4, "train_per_class": 40, "test_per_class": 20},
            "num_tasks": 2,
            "epochs_first_task": 2,
            "epochs_other_tasks": 1,
            "batch_size": 16,
            "model": {"family": "mlp", "hidden": [16]}
        }]
    });
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

#[test]
fn run_writes_records_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &[0, 1]);

    let out = kancl(&["run", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("done tiny seed 0"), "{stdout}");
    assert!(stdout.contains("done tiny seed 1"), "{stdout}");

    for seed in [0, 1] {
        let stem = dir.path().join(format!("runs/tiny_s{seed}"));
        let rec: RunRecord =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json")).unwrap())
                .unwrap();
        assert_eq!(rec.seed, seed);
        assert_eq!(rec.name, "tiny");
        // the record echoes the resolved config, not the sparse input
        assert_eq!(rec.scenario.optim.lr, Some(1e-3));
        assert_eq!(rec.matrix.num_tasks(), 2);
        assert!(stem.with_extension("csv").is_file());
    }
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg_a = write_config(dir_a.path(), &[7]);
    let cfg_b = write_config(dir_b.path(), &[7]);

    assert_eq!(code(&kancl(&["run", "--config", cfg_a.to_str().unwrap()], &[])), 0);
    assert_eq!(code(&kancl(&["run", "--config", cfg_b.to_str().unwrap()], &[])), 0);

    let csv_a = std::fs::read(dir_a.path().join("runs/tiny_s7.csv")).unwrap();
    let csv_b = std::fs::read(dir_b.path().join("runs/tiny_s7.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "accuracy matrices differ between identical runs");
}

#[test]
fn dotted_overrides_change_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &[0]);

    let out = kancl(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--model.family=fastkan",
            "--model.hidden",
            "[8]",
            "--optim.lr",
            "0.005",
        ],
        &[],
    );
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rec: RunRecord = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("runs/tiny_s0.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(rec.family, "fastkan");
    assert_eq!(rec.scenario.optim.lr, Some(0.005));
}

#[test]
fn report_aggregates_run_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &[0, 1]);
    assert_eq!(code(&kancl(&["run", "--config", cfg.to_str().unwrap()], &[])), 0);

    let report_dir = dir.path().join("report");
    let out = kancl(
        &[
            "report",
            dir.path().join("runs/tiny_s0.json").to_str().unwrap(),
            dir.path().join("runs/tiny_s1.json").to_str().unwrap(),
            "--out",
            report_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let summary = std::fs::read_to_string(report_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("scenario,family,seeds,"), "{summary}");
    assert!(summary.contains("tiny,mlp,0 1,"), "{summary}");
    for name in ["tiny_s0_avg_acc.dat", "tiny_s0_forgetting.dat", "tiny_s0_curve.dat"] {
        assert!(report_dir.join(name).is_file(), "missing {name}");
    }
}

#[test]
fn config_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();

    // unparseable JSON
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    let out = kancl(&["run", "--config", broken.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2);

    // well-formed JSON, unknown field
    let unknown = dir.path().join("unknown.json");
    std::fs::write(
        &unknown,
        serde_json::json!({
            "scenarios": [{
                "name": "x", "dataset": "synthetic", "num_tasks": 2,
                "model": {"family": "mlp"}, "typo": 1
            }]
        })
        .to_string(),
    )
    .unwrap();
    let out = kancl(&["run", "--config", unknown.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo"));

    // clap usage error
    let out = kancl(&["run"], &[]);
    assert_eq!(code(&out), 2);

    // dotted override on the wrong subcommand
    let out = kancl(&["gradcheck", "--optim.lr", "0.1"], &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("run subcommand"));

    // override missing its value
    let cfg = write_config(dir.path(), &[0]);
    let out = kancl(&["run", "--config", cfg.to_str().unwrap(), "--optim.lr"], &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_dataset_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mnist.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "out_dir": dir.path().join("runs"),
            "scenarios": [{
                "name": "m", "dataset": "mnist", "num_tasks": 5,
                "model": {"family": "mlp"}
            }]
        })
        .to_string(),
    )
    .unwrap();

    // via --data-root
    let out = kancl(
        &["run", "--config", cfg.to_str().unwrap(), "--data-root", "/nonexistent"],
        &[],
    );
    assert_eq!(code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("train-images"), "{stderr}");
    assert!(stderr.contains("DATA_ROOT"), "{stderr}");

    // via the environment variable
    let out = kancl(&["run", "--config", cfg.to_str().unwrap()], &[("DATA_ROOT", "/nonexistent")]);
    assert_eq!(code(&out), 3);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&kancl(&["--help"], &[])), 0);
    assert_eq!(code(&kancl(&["--version"], &[])), 0);
    assert_eq!(code(&kancl(&["run", "--help"], &[])), 0);
}

#[test]
fn parallel_run_matches_sequential_output() {
    let dir_seq = tempfile::tempdir().unwrap();
    let dir_par = tempfile::tempdir().unwrap();
    let cfg_seq = write_config(dir_seq.path(), &[0, 1]);
    let cfg_par = write_config(dir_par.path(), &[0, 1]);

    assert_eq!(code(&kancl(&["run", "--config", cfg_seq.to_str().unwrap()], &[])), 0);
    assert_eq!(
        code(&kancl(&["run", "--config", cfg_par.to_str().unwrap(), "--parallel", "2"], &[])),
        0
    );

    for seed in [0, 1] {
        let a = std::fs::read(dir_seq.path().join(format!("runs/tiny_s{seed}.csv"))).unwrap();
        let b = std::fs::read(dir_par.path().join(format!("runs/tiny_s{seed}.csv"))).unwrap();
        assert_eq!(a, b, "parallel execution changed seed {seed}'s matrix");
    }
}
