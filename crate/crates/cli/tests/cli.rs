//! End-to-end runs of the binary: every subcommand, the documented exit
//! codes, and determinism of generated files.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subcohort"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_CONFIG: &str = r#"
[cohort]
individuals = 40

[run]
replicates = 1
strategies = ["dbeta", "full"]
budgets = [5]
seed = 417

[chain]
iterations = 500
burn_in = 200
retain = 50

[selection]
q = 8
mc_reps = 8
"#;

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.toml"), TINY_CONFIG).unwrap();

    let out = run(
        &["generate", "--config", "tiny.toml", "--out", "cohort.csv"],
        root,
    );
    assert_code(&out, 0);
    let cohort = std::fs::read_to_string(root.join("cohort.csv")).unwrap();
    assert_eq!(cohort.lines().count(), 41);
    assert!(cohort.starts_with("id,baseline_age,x_w0,x_w1,x_w2,z_w0,z_w1,z_w2,event_age,event"));

    let out = run(
        &["generate", "--config", "tiny.toml", "--out", "again.csv"],
        root,
    );
    assert_code(&out, 0);
    assert_eq!(
        std::fs::read(root.join("cohort.csv")).unwrap(),
        std::fs::read(root.join("again.csv")).unwrap(),
        "same seed must give identical files"
    );

    let out = run(
        &[
            "generate",
            "--config",
            "tiny.toml",
            "--seed",
            "99",
            "--out",
            "other.csv",
        ],
        root,
    );
    assert_code(&out, 0);
    assert_ne!(
        std::fs::read(root.join("cohort.csv")).unwrap(),
        std::fs::read(root.join("other.csv")).unwrap(),
        "different seed must change the cohort"
    );

    let out = run(
        &[
            "estimate",
            "--config",
            "tiny.toml",
            "--cohort",
            "cohort.csv",
            "--out",
            "est",
            "--include-fills",
        ],
        root,
    );
    assert_code(&out, 0);
    assert!(root.join("est/draws.csv").exists());
    let summary = std::fs::read_to_string(root.join("est/summary.csv")).unwrap();
    assert!(summary.starts_with("param,mean,sd,lo95,median,hi95,ess"));
    assert!(summary.contains("beta_x,"));
    assert!(summary.contains("gamma_z,"));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("beta_z"));
    assert!(text.contains("acceptance"));

    let out = run(
        &[
            "select",
            "--config",
            "tiny.toml",
            "--cohort",
            "cohort.csv",
            "--draws",
            "est/draws.csv",
            "--wave",
            "1",
            "--strategy",
            "dbeta",
            "--budget",
            "5",
            "--out",
            "sel",
        ],
        root,
    );
    assert_code(&out, 0);
    let selection = std::fs::read_to_string(root.join("sel/selection.csv")).unwrap();
    assert_eq!(selection.lines().count(), 6, "{selection}");
    assert!(selection.starts_with("id,round,criterion,age_days,x_w0,z_w0"));
    let design = std::fs::read_to_string(root.join("sel/design.csv")).unwrap();
    assert_eq!(design.lines().count(), 41);

    let out = run(
        &[
            "select",
            "--config",
            "tiny.toml",
            "--cohort",
            "cohort.csv",
            "--design",
            "sel/design.csv",
            "--wave",
            "2",
            "--strategy",
            "srs",
            "--budget",
            "4",
            "--out",
            "sel2",
        ],
        root,
    );
    assert_code(&out, 0);
    assert!(root.join("sel2/design.csv").exists());

    let out = run(
        &["experiment", "--config", "tiny.toml", "--out", "art"],
        root,
    );
    assert_code(&out, 0);
    for name in ["replicates.csv", "selections.csv", "failures.csv", "meta.json"] {
        assert!(root.join("art").join(name).exists(), "{name} missing");
    }

    let out = run(
        &["report", "--artifacts", "art", "--out", "rep"],
        root,
    );
    assert_code(&out, 0);
    for name in ["table.csv", "table.json", "table.txt", "selection_order.csv"] {
        assert!(root.join("rep").join(name).exists(), "{name} missing");
    }
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("strategy"));
    assert!(text.contains("full"));
}

#[test]
fn config_problems_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    std::fs::write(root.join("typo.toml"), "[run]\nreplicats = 1\n").unwrap();
    let out = run(
        &["generate", "--config", "typo.toml", "--out", "c.csv"],
        root,
    );
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo.toml"));

    std::fs::write(root.join("tiny.toml"), TINY_CONFIG).unwrap();
    let out = run(
        &[
            "select",
            "--config",
            "tiny.toml",
            "--cohort",
            "missing.csv",
            "--wave",
            "1",
            "--strategy",
            "srs",
            "--budget",
            "3",
            "--out",
            "sel",
        ],
        root,
    );
    assert_code(&out, 2);

    let out = run(&["report", "--artifacts", "nowhere"], root);
    assert_code(&out, 2);

    let out = run(
        &["generate", "--config", "tiny.toml", "--profile", "paper"],
        root,
    );
    assert_code(&out, 2, );
}

#[test]
fn missing_budget_for_srs_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.toml"), TINY_CONFIG).unwrap();
    let out = run(
        &["generate", "--config", "tiny.toml", "--out", "c.csv"],
        root,
    );
    assert_code(&out, 0);
    let out = run(
        &[
            "select",
            "--config",
            "tiny.toml",
            "--cohort",
            "c.csv",
            "--wave",
            "1",
            "--strategy",
            "srs",
            "--out",
            "sel",
        ],
        root,
    );
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--budget"));
}

#[test]
fn write_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("tiny.toml"), TINY_CONFIG).unwrap();
    std::fs::write(root.join("blocker"), "file, not a directory").unwrap();
    let out = run(
        &[
            "experiment",
            "--config",
            "tiny.toml",
            "--out",
            "blocker/sub",
        ],
        root,
    );
    assert_code(&out, 3);
}
