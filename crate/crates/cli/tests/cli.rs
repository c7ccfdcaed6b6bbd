use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn drop_cmd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drop"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = drop_cmd(args, cwd);
    assert!(
        out.status.success(),
        "drop {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn prepare_drop_run(dir: &Path) {
    ok(
        &["demo-record", "--demonstrator", "l4", "--episodes", "3", "--max-steps", "300", "--out", "demos"],
        dir,
    );
    ok(
        &["train-prior", "--demos", "demos/cartpole-l4.demo.jsonl", "--epochs", "20", "--out", "prior"],
        dir,
    );
    ok(
        &[
            "train", "--method", "drop", "--select", "she", "--update-method", "dru", "--prior", "prior/prior.json",
            "--episodes", "30", "--max-steps", "300", "--seed", "4", "--out", "run",
        ],
        dir,
    );
}

#[test]
fn record_train_and_collect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare_drop_run(dir);
    assert!(dir.join("demos/stats.json").exists());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("prior/train_report.json")).unwrap()).unwrap();
    assert!(report["training_accuracy"].as_f64().unwrap() > 0.5);
    for f in ["agent.json", "q.csv", "cq.csv", "cp_0.csv", "episodes.csv", "config.json"] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    let episodes = fs::read_to_string(dir.join("run/episodes.csv")).unwrap();
    assert_eq!(episodes.lines().count(), 31);
    assert!(episodes.starts_with("episode,return,steps,explore,q,prior_0"));

    ok(
        &[
            "request-collect", "--artifacts", "run", "--max-steps", "300", "--budget-episodes", "2", "--horizon", "5",
            "--out", "req",
        ],
        dir,
    );
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("req/report.json")).unwrap()).unwrap();
    assert_eq!(r["collection"]["episodes"], 2);
    assert!(dir.join("req/requested.demo.jsonl").exists());
    assert!(dir.join("req/full.demo.jsonl").exists());
}

#[test]
fn battery_writes_reproducible_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let spec = r#"{
        "env": {"env_kind": "cartpole", "max_steps": 200},
        "episodes": 40, "trials": 2, "master_seed": 9, "head": 10,
        "methods": [
            {"name": "qlearn", "agent": {"method": "qlearn"}},
            {"name": "sarsa", "agent": {"method": "sarsa"}}
        ]
    }"#;
    fs::write(dir.join("exp.json"), spec).unwrap();
    let table = ok(&["battery", "--spec", "exp.json", "--out", "a"], dir);
    assert!(table.contains("Jumpstart") && table.contains("sarsa"));
    ok(&["battery", "--spec", "exp.json", "--out", "b"], dir);
    for f in ["curves.csv", "summary.csv", "table.txt"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = drop_cmd(&["train", "--method", "hat", "--episodes", "5", "--out", "x"], dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("prior"));

    let dup = r#"{"env": {"env_kind": "cartpole"}, "episodes": 40, "trials": 1, "head": 10,
        "methods": [{"name": "a", "agent": {"method": "qlearn"}}, {"name": "a", "agent": {"method": "sarsa"}}]}"#;
    fs::write(dir.join("dup.json"), dup).unwrap();
    let out = drop_cmd(&["battery", "--spec", "dup.json", "--out", "o"], dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate"));

    let out = drop_cmd(&["train", "--method", "qlearn", "--phi", "0.9", "--out", "x"], dir);
    assert!(!out.status.success());
    let out = drop_cmd(&["demo-record", "--demonstrator", "l9", "--out", "x"], dir);
    assert!(!out.status.success());
}
