use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metaforget"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--out", out, "--iterations", "30", "--seed", "7", "--log-every", "0"];
    args.extend_from_slice(extra);
    let o = run(dir, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join(out).join("checkpoint.txt")
}

const SMALL_EVAL: [&str; 4] = ["--curves", "4", "--repeats", "3"];

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(dir.path(), "a", &["--method", "l2f", "--k", "5"]);
    let b = train(dir.path(), "b", &["--method", "l2f", "--k", "5"]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn gamma_identity_with_maml_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--out", "x", "--method", "maml", "--gamma-identity"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gamma_identity"), "{}", stderr(&o));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn default_config_is_archived() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--out", "run", "--iterations", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let archived = std::fs::read_to_string(dir.path().join("run/train-config.toml")).unwrap();
    assert!(archived.contains("inner_lr = 0.01"), "{archived}");
    assert!(archived.contains("meta_batch_size = 4"), "{archived}");
    // the archive alone reproduces the run
    let o = run(dir.path(), &["train", "--config", "run/train-config.toml", "--out", "again"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(dir.path().join("run/checkpoint.txt")).unwrap(),
        std::fs::read(dir.path().join("again/checkpoint.txt")).unwrap()
    );
}

#[test]
fn outputs_stay_inside_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train(dir.path(), "run", &["--conflict-every", "10"]);
    let ck = ck.to_str().unwrap();
    for args in [
        vec!["eval", "--checkpoint", ck, "--out", "run"],
        vec!["diagnose", "--checkpoint", ck, "--out", "run", "--which", "conflict,landscape,gamma-log", "--tasks", "5"],
        vec!["sweep", "--checkpoint", ck, "--out", "run", "--layers", "0", "--gammas", "0.5"],
    ] {
        let mut args = args;
        args.extend_from_slice(&SMALL_EVAL);
        let o = run(dir.path(), &args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let top: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(top, vec!["run"]);
    let mut files: Vec<String> =
        std::fs::read_dir(dir.path().join("run")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(
        files,
        [
            "checkpoint.txt",
            "conflict.csv",
            "conflict_train.csv",
            "diagnose-config.toml",
            "eval-config.toml",
            "eval.csv",
            "gamma_log.csv",
            "gamma_train.csv",
            "landscape.csv",
            "sweep-config.toml",
            "sweep.csv",
            "train-config.toml",
            "train.csv"
        ]
    );
}

#[test]
fn eval_table_has_one_row_per_step_count_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train(dir.path(), "run", &[]);
    let ck = ck.to_str().unwrap();
    let mut tables = Vec::new();
    for out in ["e1", "e2"] {
        let mut args = vec!["eval", "--checkpoint", ck, "--out", out, "--eval-steps", "1,2,5"];
        args.extend_from_slice(&SMALL_EVAL);
        let o = run(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("95% CI"));
        tables.push(std::fs::read_to_string(dir.path().join(out).join("eval.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let rows = csv_rows(&dir.path().join("e1/eval.csv"));
    assert_eq!(rows.len(), 3);
    for (row, steps) in rows.iter().zip(["1", "2", "5"]) {
        assert_eq!(row[0], steps);
        assert_eq!(row[1], "mse");
        assert_eq!(row[4], "12");
    }
}

#[test]
fn architecture_mismatch_lists_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train(dir.path(), "run", &[]);
    let o = run(dir.path(), &["eval", "--checkpoint", ck.to_str().unwrap(), "--out", "e", "--task", "classification"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("[1, 40, 40, 1]") && err.contains("[8, 40, 40, 5]"), "{err}");
}

#[test]
fn empty_diagnostic_selection_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["diagnose", "--checkpoint", "missing.txt", "--out", "d"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"));
    assert!(!dir.path().join("d").exists());
}

#[test]
fn conflict_on_maml_checkpoint_has_both_sections() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train(dir.path(), "run", &["--method", "maml"]);
    let o = run(dir.path(), &["diagnose", "--checkpoint", ck.to_str().unwrap(), "--out", "d", "--which", "conflict", "--tasks", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files: Vec<_> = std::fs::read_dir(dir.path().join("d")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.iter().filter(|f| f.to_string_lossy().ends_with(".csv")).count(), 1);
    let rows = csv_rows(&dir.path().join("d/conflict.csv"));
    assert_eq!(rows.iter().filter(|r| r[0] == "per-layer").count(), 3);
    assert_eq!(rows.iter().filter(|r| r[0] == "per-task").count(), 1);
    for r in &rows {
        assert_eq!(r[3], "50");
        let angle: f64 = r[4].parse().unwrap();
        assert!((0.0..=std::f64::consts::PI).contains(&angle));
    }
}

#[test]
fn landscape_beta_is_finite_and_non_negative() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train(dir.path(), "run", &[]);
    let o = run(dir.path(), &["diagnose", "--checkpoint", ck.to_str().unwrap(), "--out", "d", "--which", "landscape", "--tasks", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("d/landscape.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "effective_beta").unwrap();
    let rows = csv_rows(&dir.path().join("d/landscape.csv"));
    assert_eq!(rows.len(), 5);
    for r in rows {
        let beta: f64 = r[col].parse().unwrap();
        assert!(beta.is_finite() && beta >= 0.0, "{beta}");
    }
}

#[test]
fn sweep_counts_rows_and_matches_baseline_at_unit_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train(dir.path(), "run", &["--method", "maml"]);
    let ck = ck.to_str().unwrap();
    let mut args = vec!["sweep", "--checkpoint", ck, "--out", "s", "--layers", "0,1,2", "--gammas", "0,0.25,0.5,0.75,1"];
    args.extend_from_slice(&SMALL_EVAL);
    let o = run(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert!(text.starts_with("# checkpoint: "), "{text}");
    let rows = csv_rows(&dir.path().join("s/sweep.csv"));
    assert_eq!(rows.len(), 15);

    let mut args = vec!["eval", "--checkpoint", ck, "--out", "e"];
    args.extend_from_slice(&SMALL_EVAL);
    assert!(run(dir.path(), &args).status.success());
    let baseline: Vec<String> = csv_rows(&dir.path().join("e/eval.csv")).into_iter().map(|r| r[2].clone()).collect();
    for r in rows.iter().filter(|r| r[1] == "1") {
        let means: Vec<String> = r[3..].iter().step_by(2).cloned().collect();
        assert_eq!(means, baseline);
    }
}

#[test]
fn divergence_keeps_a_partial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--out", "run", "--iterations", "50", "--inner-lr", "1e6", "--inner-steps-train", "5", "--method", "maml"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    assert!(dir.path().join("run/checkpoint.partial.txt").exists());
    assert!(!dir.path().join("run/checkpoint.txt").exists());
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["train", "--method", "reptile"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["--version"]).status.code(), Some(0));
    std::fs::write(dir.path().join("bad.toml"), "[meta]\nalpha = 1\n").unwrap();
    let o = run(dir.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpha"));
    let o = run(dir.path(), &["eval", "--out", "e"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn classification_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train(dir.path(), "run", &["--task", "classification", "--method", "learned-layer"]);
    let o = run(dir.path(), &["eval", "--checkpoint", ck.to_str().unwrap(), "--out", "run", "--task", "classification", "--eval-tasks", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("run/eval.csv"));
    assert!(rows.iter().all(|r| r[1] == "accuracy" && r[4] == "20"));
}

#[test]
fn selftest_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["selftest", "--filter", "scalar"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("PASS scalar-closed-form"), "{out}");
    assert_eq!(run(dir.path(), &["selftest", "--filter", "nothing-matches"]).status.code(), Some(2));
}
