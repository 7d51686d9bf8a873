use std::path::Path;
use std::process::{Command, Output};

use rmfs_core::bench::read_results_csv;

fn rmfs(args: &[&str], out: &Path) -> Output {
    let output = Command::new(env!("CARGO_BIN_EXE_rmfs"))
        .args(args)
        .args(["--orders", "600", "--skewness", "0.6", "--out"])
        .arg(out)
        .output()
        .expect("rmfs runs");
    assert!(output.status.success(), "{args:?}: {}", String::from_utf8_lossy(&output.stderr));
    output
}

#[test]
fn generate_train_eval_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    rmfs(&["generate"], out);
    let orders = std::fs::read_to_string(out.join("orders_s0.6.csv")).unwrap();
    assert!(orders.lines().count() > 1);

    rmfs(&["train", "--episodes", "3", "--seed", "4"], out);
    assert!(out.join("agent_s0.6.weights").is_file());
    let curve = std::fs::read_to_string(out.join("curve_s0.6.csv")).unwrap();
    assert!(curve.starts_with("episode,gain_percent,random,class,sl\n"));

    rmfs(&["eval", "--policies", "sl,agent,agent+rollout:h=2"], out);
    let rows = read_results_csv(std::fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.policy.as_str()).collect();
    assert_eq!(names, ["random", "sl", "agent", "agent+rollout:h=2"]);
    assert_eq!(rows[3].h, Some(2));

    let t2 = rmfs(&["table2", "--horizons", "2,3"], out);
    let text = String::from_utf8(t2.stdout).unwrap();
    assert!(text.contains("sl h=2") && text.contains("agent h=3"), "{text}");
    assert!(out.join("table2.csv").is_file());

    let t1 = rmfs(&["table1"], out);
    assert!(String::from_utf8(t1.stdout).unwrap().contains("agent"));
}

#[test]
fn missing_weights_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_rmfs"))
        .args(["eval", "--policies", "agent", "--orders", "600", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("missing agent weights"));
}

#[test]
fn config_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[experiment]\npolicies = [\"sl\"]\nskewness = [0.5, 0.9]\n").unwrap();
    let out = dir.path().join("o");
    let status = Command::new(env!("CARGO_BIN_EXE_rmfs"))
        .args(["eval", "--orders", "600", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rows = read_results_csv(std::fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.s == 0.5 || r.s == 0.9));
}
