use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn afford(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afford")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_flag_prints_usage_and_exits_2() {
    let out = afford(&["drive", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(afford(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = afford(&["drive", "--scenario", "does-not-exist.toml", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "track = \"nowhere.track\"\n").unwrap();
    assert_eq!(afford(&["drive", "--scenario", s(&bad)]).status.code(), Some(2));
    let lanes = scenario("lanes2.toml");
    assert_eq!(afford(&["drive", "--scenario", &lanes, "--duration", "-1"]).status.code(), Some(2));
    assert_eq!(afford(&["drive", "--scenario", &lanes, "--perceiver", "learned"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = afford(&["drive", "--scenario", &scenario("lanes1.toml"), "--duration", "1", "--out", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn drive_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| -> PathBuf {
        let out_dir = dir.path().join(name);
        let pairs = dir.path().join(format!("{name}.pairs.csv"));
        let out = afford(&[
            "drive", "--scenario", &scenario("noisy3.toml"), "--seed", "4", "--duration", "60",
            "--out", s(&out_dir), "--pairs-log", s(&pairs),
        ]);
        assert_ok(&out);
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["trajectory.csv", "report.txt", "report.csv"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
    assert_eq!(std::fs::read(dir.path().join("a.pairs.csv")).unwrap(), std::fs::read(dir.path().join("b.pairs.csv")).unwrap());
}

#[test]
fn eval_of_an_oracle_pairs_log_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.csv");
    let report = dir.path().join("mae.csv");
    assert_ok(&afford(&[
        "drive", "--scenario", &scenario("lanes3.toml"), "--perceiver", "oracle", "--duration", "60",
        "--out", s(&dir.path().join("run")), "--pairs-log", s(&pairs),
    ]));
    let out = afford(&["eval", "--pairs", s(&pairs), "--out", s(&report)]);
    assert_ok(&out);
    let text = std::fs::read_to_string(&report).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if !cells[2].is_empty() {
            assert_eq!(cells[2].parse::<f64>().unwrap(), 0.0, "{line}");
            rows += 1;
        }
    }
    assert!(rows >= 4, "{text}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("closest car by area"));
}

#[test]
fn eval_summarizes_a_trajectory_log() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_ok(&afford(&["drive", "--scenario", &scenario("lanes2.toml"), "--duration", "30", "--out", s(&run)]));
    let again = dir.path().join("again.csv");
    assert_ok(&afford(&["eval", "--log", s(&run.join("trajectory.csv")), "--out", s(&again)]));
    assert_eq!(std::fs::read(run.join("report.csv")).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn record_train_eval_replay_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("frames.afd");
    let model = dir.path().join("model.ckpt");
    let sc = scenario("learn_oval3.toml");
    assert_ok(&afford(&["record", "--headless", "--scenario", &sc, "--seed", "5", "--frames", "150", "--out", s(&data)]));
    assert_ok(&afford(&["record", "--headless", "--append", "--scenario", &sc, "--seed", "6", "--frames", "50", "--out", s(&data)]));
    assert_ok(&afford(&[
        "train", "--data", s(&data), "--out", s(&model), "--iterations", "40", "--hidden", "16", "--batch", "8",
    ]));
    let cmp = dir.path().join("cmp.csv");
    let out = afford(&["eval", "--data", s(&data), "--model", s(&model), "--baseline-from", s(&data), "--out", s(&cmp)]);
    assert_ok(&out);
    let text = std::fs::read_to_string(&cmp).unwrap();
    assert!(text.starts_with("indicator,model_mae,baseline_mae,frames"));
    assert_eq!(text.lines().count(), 14);

    // the learned model can drive, however badly
    assert_ok(&afford(&[
        "drive", "--scenario", &sc, "--perceiver", "learned", "--model", s(&model), "--duration", "5",
        "--out", s(&dir.path().join("learned")),
    ]));

    // a headless recording holds consecutive ticks, so it replays; the
    // appended second run restarts at tick 0 and is rejected
    let single = dir.path().join("single.afd");
    assert_ok(&afford(&["record", "--headless", "--scenario", &sc, "--seed", "5", "--frames", "300", "--out", s(&single)]));
    let replay = afford(&["replay", "--scenario", &sc, "--seed", "5", "--data", s(&single)]);
    assert_ok(&replay);
    assert!(String::from_utf8_lossy(&replay.stdout).contains("matches"));
    let diverged = afford(&["replay", "--scenario", &sc, "--seed", "6", "--data", s(&single)]);
    assert_eq!(diverged.status.code(), Some(3));
    assert_eq!(afford(&["replay", "--scenario", &sc, "--seed", "5", "--data", s(&data)]).status.code(), Some(2));
}
