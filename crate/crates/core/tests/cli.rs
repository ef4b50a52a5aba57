use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tecrl");

fn tecrl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

const SMALL: &str = "\
algo = \"tecrl\"
env = \"point-mass\"
total_iterations = 400
eval_interval = 100
eval_episodes = 2
batch = 16
warm = 64
buffer = 5000
hidden = [8, 8]
env_max_episode_steps = 50
";

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_reports_json_and_exit_codes() {
    let out = tecrl(&["verify", "fixed-point"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["suite"], "fixed-point");

    let out = tecrl(&["verify", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("contraction"));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gama = 0.9\n");
    let out = tecrl(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`gama`") && err.contains("gamma"), "{err}");

    let out = tecrl(&["train", "--set", "env=cartpole"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tecrl(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["metrics.csv", "checkpoint.bin", "final_score.json", "config.toml"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(!x.is_empty());
        assert!(x == y, "{file} differs");
    }
    let csv = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    let iterations: Vec<&str> = csv.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iterations, ["100", "200", "300", "400"]);

    // different seed, different bytes
    let c = dir.path().join("c");
    tecrl(&["train", "--config", &cfg, "--set", "seed=1", "--out", c.to_str().unwrap(), "--quiet"]);
    assert_ne!(std::fs::read(a.join("checkpoint.bin")).unwrap(), std::fs::read(c.join("checkpoint.bin")).unwrap());
}

#[test]
fn score_and_eval_use_run_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("multi");
    let o = tecrl(&["train", "--config", &cfg, "--seeds", "0..1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let combined: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(combined["per_seed"].as_array().unwrap().len(), 2);

    let m0 = out.join("seed-0/metrics.csv");
    let m1 = out.join("seed-1/metrics.csv");
    let o = tecrl(&["score", m0.to_str().unwrap(), m1.to_str().unwrap(), "--total-iterations", "400"]);
    assert_eq!(o.status.code(), Some(0));
    let rescored: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rescored, combined);

    let run_cfg = out.join("seed-0/config.toml");
    let ck = out.join("seed-0/checkpoint.bin");
    let o = tecrl(&["eval", "--config", run_cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap(), "--episodes", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let e: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(e["mean"].as_f64().unwrap().is_finite());

    // a checkpoint cannot be loaded into a differently shaped network
    let o = tecrl(&["eval", "--set", "env=point-mass", "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_iteration_run_has_header_only_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n").replace("total_iterations = 400", "total_iterations = 0"));
    let o = tecrl(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("# tecrl-metrics v1\niteration,"));
}
