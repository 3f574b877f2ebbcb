use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mcast(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcast"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn simulate_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = mcast(&["simulate", "--out", "run", "--count", "3", "--seed", "7"], d);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("wrote 3 snapshots"));

    fs::write(d.join("exp.cfg"), "# short profile\nepisodes = 12\nnet = desk\nratio = 1:0.01\n").unwrap();
    let o = mcast(&["train", "--config", "exp.cfg", "--out", "run", "--seed", "3", "--episodes", "15"], d);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("trained 15 episodes on 3 snapshots"), "{}", text(&o));
    let log = fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 16);

    let o = mcast(&["evaluate", "--out", "run", "--eval", "0,2", "--aggregate"], d);
    assert!(o.status.success(), "{}", text(&o));
    let csv = fs::read_to_string(d.join("run/evaluate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
    assert!(d.join("run/aggregate.csv").is_file());

    let o = mcast(&["install", "--out", "run", "--snapshot-index", "1", "--dry-run"], d);
    if o.status.success() {
        assert!(text(&o).contains("dry run"));
    } else {
        assert!(text(&o).contains("did not converge"), "{}", text(&o));
    }
    assert!(!d.join("run/flows_1.json").exists());

    let o = mcast(&["oracle", "--out", "run", "--eval", "1"], d);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("snapshot   1: best 0.704811"), "{}", text(&o));
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = mcast(&["simulate", "--out", "x", "--ratio", "1-0.01"], d);
    assert!(!o.status.success());
    assert!(text(&o).contains("reward ratio"), "{}", text(&o));

    let o = mcast(&["train", "--out", "nowhere"], d);
    assert!(!o.status.success());
    assert!(text(&o).contains("snapshot store"), "{}", text(&o));

    fs::write(d.join("bad.cfg"), "learning_rate: 3\n").unwrap();
    let o = mcast(&["simulate", "--config", "bad.cfg"], d);
    assert!(!o.status.success());
    assert!(text(&o).contains("config line 1"), "{}", text(&o));

    let o = mcast(&["simulate", "--out", "x", "--topology", "missing.topo"], d);
    assert!(!o.status.success());
}

#[test]
fn negative_ratios_parse() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcast(&["simulate", "--out", "n", "--count", "1", "--ratio", "1:-0.1"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
}
