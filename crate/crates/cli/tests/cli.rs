use std::path::Path;
use std::process::{Command, Output};

fn smkl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smkl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_BATCH: &str = r#"
preset = "group-lasso-paper"

[experiment]
m = 12
groups = 6
s = 2
p = 12
group_dims = [2, 2, 2, 2, 2, 2]
iters = 400
n_instances = 5
"#;

#[test]
fn scalar_example_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = smkl(
        &["solve", "--example", "paper-1d", "--out-dir", "o"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for line in [
        "supp={1}",
        "esupp={1}",
        "qc_margin=0",
        "reference_supp={}",
        "sandwich=pass",
        "iterations=50",
    ] {
        assert!(text.lines().any(|l| l == line), "missing {line} in\n{text}");
    }
    assert_eq!(
        std::fs::read_to_string(dir.path().join("o/report.txt")).unwrap(),
        text
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["config"]["example"], "paper-1d");
    assert!(!dir.path().join("o/.manifest.json.tmp").exists());
}

#[test]
fn zero_iterations_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = smkl(
        &["solve", "--example", "paper-1d", "--iters", "0"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("iters"));
}

#[test]
fn missing_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[experiment]\nfamily = \"group-lasso\"\nm = 10\n",
    )
    .unwrap();
    let out = smkl(&["batch", "--config", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("groups"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "preset = \"group-lasso-paper\"\n[experiment]\nlambdaa = 1.0\n",
    )
    .unwrap();
    let out = smkl(&["batch", "--config", "c.toml", "--dry-run"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("lambdaa"));
}

#[test]
fn unreadable_config_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = smkl(&["batch", "--config", "absent.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn divergence_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "1,1e300\n").unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[kernel]\nkind = \"linear-group-projection\"\ngroup_dims = [1]\n[data]\npath = \"d.csv\"\nlambda = 1e-300\n",
    )
    .unwrap();
    let out = smkl(
        &[
            "solve",
            "--config",
            "c.toml",
            "--tau-factor",
            "1.9",
            "--iters",
            "10",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = smkl(
        &[
            "batch",
            "--preset",
            "group-lasso-paper",
            "--instances",
            "50",
            "--seed",
            "7",
            "--dry-run",
            "--out-dir",
            "o",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(
        text.contains("n_instances = 50") && text.contains("master_seed = 7"),
        "{text}"
    );
    assert!(!dir.path().join("o").exists());
}

#[test]
fn batch_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL_BATCH).unwrap();
    let a = smkl(
        &["batch", "--config", "c.toml", "--out-dir", "a", "--traces"],
        dir.path(),
    );
    let b = smkl(
        &[
            "batch",
            "--config",
            "c.toml",
            "--out-dir",
            "b",
            "--traces",
            "--jobs",
            "1",
        ],
        dir.path(),
    );
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    for file in ["histogram.csv", "traces.jsonl", "summary.json"] {
        let x = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
    let csv = std::fs::read_to_string(dir.path().join("a/histogram.csv")).unwrap();
    assert!(csv.starts_with("support_size,count\n"));
    let total: usize = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 5);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["master_seed"], 20_180_903);
    assert_eq!(manifest["config"]["n_instances"], 5);
}

#[test]
fn seed_changes_the_batch() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL_BATCH).unwrap();
    smkl(
        &["batch", "--config", "c.toml", "--out-dir", "a"],
        dir.path(),
    );
    smkl(
        &[
            "batch",
            "--config",
            "c.toml",
            "--out-dir",
            "b",
            "--seed",
            "99",
        ],
        dir.path(),
    );
    let x = std::fs::read(dir.path().join("a/summary.json")).unwrap();
    let y = std::fs::read(dir.path().join("b/summary.json")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn lattice_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let ok = smkl(
        &["verify", "--lattice-G", "8", "--out-dir", "o"],
        dir.path(),
    );
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("lattice G=8: PASS"));
    let bad = smkl(&["verify", "--lattice-G", "17"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn oracle_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = smkl(
        &[
            "verify",
            "--oracle-suite",
            "small",
            "--instances",
            "8",
            "--out-dir",
            "o",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}{}", stdout(&out), stderr(&out));
    assert_eq!(stdout(&out).matches("PASS").count(), 3);
}

#[test]
fn dataset_solve_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "1, 0, 3\n0, 1, 0.5\n").unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[kernel]\nkind = \"linear-group-projection\"\ngroup_dims = [1, 1]\n[data]\npath = \"d.csv\"\nlambda = 1.0\n",
    )
    .unwrap();
    let out = smkl(
        &[
            "solve",
            "--config",
            "c.toml",
            "--stop-tol",
            "1e-12",
            "--traces",
            "--out-dir",
            "o",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.lines().any(|l| l == "supp={1}"));
    let objective: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("objective="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((objective - 2.625).abs() < 1e-10);
    assert!(dir.path().join("o/traces.jsonl").exists());
}
