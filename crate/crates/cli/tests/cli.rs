use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn indelphy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_indelphy")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn simulate_writes_one_line_per_leaf() {
    let dir = tempfile::tempdir().unwrap();
    let o = indelphy(&["simulate", "--depth", "2", "--k", "16", "--track-lineage", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let leaves = fs::read_to_string(dir.path().join("leaves.tsv")).unwrap();
    assert_eq!(data_lines(&leaves).len(), 4);
    assert!(leaves.starts_with("# config_hash="));
    let lineage = fs::read_to_string(dir.path().join("lineage.tsv")).unwrap();
    assert_eq!(data_lines(&lineage).len(), 4);
    for name in ["tree.params", "tree.nwk", "config.txt"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
}

#[test]
fn malformed_leaf_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "a\t0101\nb\t01x1\n").unwrap();
    let o = indelphy(&["reconstruct", "--leaves", path(&bad), "--out", path(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn unknown_flag_exits_1() {
    assert_eq!(indelphy(&["simulate", "--bogus"]).status.code(), Some(1));
}

#[test]
fn unrelated_leaves_stall_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // eight leaves that share nothing: every quartet split is noise
    let sim = indelphy(&["simulate", "--depth", "3", "--k", "4000", "--p-sub", "0.499", "--p-del", "0", "--p-ins", "0", "--out", path(dir.path())]);
    assert!(sim.status.success());
    let o = indelphy(&[
        "reconstruct",
        "--k",
        "4000",
        "--zeta",
        "0.2",
        "--leaves",
        path(&dir.path().join("leaves.tsv")),
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stalled"));
}

#[test]
fn oracle_reconstruction_has_rf_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(indelphy(&["simulate", "--depth", "4", "--k", "8", "--out", path(dir.path())]).status.success());
    let out = dir.path().join("o");
    let o = indelphy(&["reconstruct", "--oracle-tree", path(&dir.path().join("tree.params")), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("rf to oracle tree: 0"));

    let rf = indelphy(&["rf", path(&out.join("tree.nwk")), path(&dir.path().join("tree.nwk"))]);
    assert_eq!(String::from_utf8_lossy(&rf.stdout).trim(), "0");
}

#[test]
fn single_trial_experiment_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    let base = ["experiment", "--depth", "2", "--k", "20000", "--trials", "1", "--zeta", "0.1", "--out", out];
    assert!(indelphy(&base).status.success());
    let results = fs::read_to_string(dir.path().join("results.tsv")).unwrap();
    // header plus one row
    assert_eq!(data_lines(&results).len(), 2);

    let again = indelphy(&base);
    assert!(again.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("results.tsv")).unwrap(), results);

    let mut changed = base.to_vec();
    changed.extend(["--seed", "9", "--resume"]);
    let o = indelphy(&changed);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
}

#[test]
fn validate_json_report_lists_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = indelphy(&[
        "validate", "--depth", "3", "--k", "2000", "--trials", "4", "--track-lineage", "--json", "--out",
        path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("reports.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let s = v.to_string();
    for name in ["lengths", "bitshifts", "block-balance"] {
        assert!(s.contains(name), "{name} missing from {s}");
    }
}
