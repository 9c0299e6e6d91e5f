use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[task]
kind = "synthetic"
num_instances = 200

[forest]
num_trees = 10
max_depth = 4

[explain]
background_rows = 16

[logs]
num_participants = 20

[behavior]
epochs = 2

[manipulation]
max_rounds = 10
restarts = 3

[evaluation]
participants_per_condition = 6
tasks_per_participant = 8
num_perms = 1000
"#;

fn xnudge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xnudge"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn only_run_dir(out: &Path) -> std::path::PathBuf {
    let mut dirs: Vec<_> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

#[test]
fn manipulate_without_behavior_model_names_the_missing_stage() {
    let dir = setup();
    let out = xnudge(dir.path(), &["--config", "tiny.toml", "manipulate"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run `train-behavior` first"), "{err}");
    assert!(only_run_dir(&dir.path().join("runs")).join("failure.json").exists());
}

#[test]
fn config_errors_exit_with_two_and_name_the_field() {
    let dir = setup();
    let out = xnudge(dir.path(), &["--config", "tiny.toml", "--step-size=-0.5", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manipulation.step_size"));

    std::fs::write(dir.path().join("bad.toml"), "[forest]\nnum_tres = 3\n").unwrap();
    let out = xnudge(dir.path(), &["--config", "bad.toml", "gen-data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_tres"));
}

#[test]
fn stages_chain_and_report_prints_a_table() {
    let dir = setup();
    for stage in [
        "gen-data",
        "train-ai",
        "explain",
        "sim-log",
        "train-behavior",
        "manipulate",
        "evaluate",
    ] {
        let out = xnudge(dir.path(), &["--config", "tiny.toml", "--seed", "11", stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = xnudge(dir.path(), &["--config", "tiny.toml", "--seed", "11", "report"]);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    for needle in ["shapley", "lime", "manipulated", "accuracy", "fprd", "fnrd", "p "] {
        assert!(table.contains(needle), "missing {needle} in\n{table}");
    }
    let run = only_run_dir(&dir.path().join("runs"));
    assert!(run.file_name().unwrap().to_str().unwrap().ends_with("-s11"));
    for f in ["config.toml", "manipulated.json", "metrics.csv", "plot.csv", "summary.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let a = setup();
    let b = setup();
    let oa = xnudge(a.path(), &["--config", "tiny.toml", "--threads", "1", "run"]);
    let ob = xnudge(b.path(), &["--config", "tiny.toml", "--threads", "8", "run"]);
    assert!(oa.status.success() && ob.status.success());
    let ra = only_run_dir(&a.path().join("runs"));
    let rb = only_run_dir(&b.path().join("runs"));
    assert_eq!(ra.file_name(), rb.file_name());
    for f in ["summary.json", "manipulated.json", "metrics.csv", "behavior_model.json"] {
        let x = std::fs::read(ra.join(f)).unwrap();
        let y = std::fs::read(rb.join(f)).unwrap();
        assert!(x == y, "{f} differs between thread counts");
    }
}

#[test]
fn seed_is_excluded_from_the_hash_but_overrides_change_it() {
    let dir = setup();
    for args in [
        vec!["--config", "tiny.toml", "--seed", "1", "gen-data"],
        vec!["--config", "tiny.toml", "--seed", "2", "gen-data"],
        vec!["--config", "tiny.toml", "--seed", "1", "--tradeoff", "0.5", "gen-data"],
    ] {
        assert!(xnudge(dir.path(), &args).status.success());
    }
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let hashes: std::collections::BTreeSet<&str> = names.iter().map(|n| &n[4..16]).collect();
    assert_eq!(names.len(), 3);
    assert_eq!(hashes.len(), 2, "{names:?}");
}
