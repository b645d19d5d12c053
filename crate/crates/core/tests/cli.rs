use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const COIN: &str = r#"{
    "atoms": ["u", "d"], "probs": [0.5, 0.5], "depth": 1,
    "partitions": { "0": [[0, 1]], "1/2": [[0], [1]] },
    "process": { "level": 1, "values": { "0": [0, 0], "1/2": [1, -1], "1": [1, -1] } }
}"#;

fn dm_lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dm-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DM_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn decompose_recovers_seed_42() {
    let dir = TempDir::new().unwrap();
    let out = dm_lab(&["decompose", "--generator", "ground-truth", "--seed", "42", "--depth", "6"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("decompose.json"));
    assert!(report["max_recovery_error"].as_f64().unwrap() < 1e-10);
    let csv = std::fs::read_to_string(dir.path().join("decompose.csv")).unwrap();
    assert!(csv.starts_with("level,martingale_residual,min_increment,recovery_error\n"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn ui_on_squared_walk_passes() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("ui.json");
    std::fs::write(&config, r#"{"generator": "squared_walk", "depth": 8, "thresholds": [0.5, 1, 2, 4]}"#).unwrap();
    let out = dm_lab(&["ui", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ui.csv")).unwrap();
    assert!(csv.starts_with("level,c,tail_mass,prob_tau_lt_1,lhs_eq1,rhs_eq1,markov_bound\n"));
    assert_eq!(csv.lines().count(), 1 + 8 * 4);
    let report = read_json(&dir.path().join("ui.json"));
    for row in report["rows"].as_array().unwrap() {
        let (lhs, rhs) = (row["lhs_eq1"].as_f64().unwrap(), row["rhs_eq1"].as_f64().unwrap());
        assert!(lhs <= rhs + 1e-10);
    }
}

#[test]
fn malformed_instance_is_a_usage_error_with_location() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, COIN.replace("[[0], [1]]", "[[0], [7]]")).unwrap();
    let out = dm_lab(&["validate", "--instance", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("$.partitions[\"1/2\"][1][0]"), "{stderr}");

    std::fs::write(&bad, "{\"atoms\": [\"a\",\n  ").unwrap();
    let out = dm_lab(&["validate", "--instance", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn invariant_failure_exits_one() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("down.json");
    let down = COIN.replace("\"1/2\": [1, -1], \"1\": [1, -1]", "\"1/2\": [-1, -1], \"1\": [-1, -1]");
    std::fs::write(&inst, down).unwrap();
    let out = dm_lab(&["validate", "--instance", inst.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a submartingale"));
    assert!(dir.path().join("validate.json").exists());
}

#[test]
fn instance_file_validates() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("coin.json");
    std::fs::write(&inst, COIN).unwrap();
    let out = dm_lab(&["validate", "--instance", inst.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("validate.json"));
    assert_eq!(report["atoms"], 2);
    assert_eq!(report["process"]["submartingale"], true);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(dm_lab(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(dm_lab(&["decompose"], dir.path()).status.code(), Some(2));
    assert_eq!(dm_lab(&["decompose", "--generator", "random", "--depth", "3"], dir.path()).status.code(), Some(2));
    let missing = dm_lab(&["decompose", "--instance", "/nonexistent/x.json"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"generator": "random", "seed": 1, "depth": 3, "max_level": 9}"#).unwrap();
    let out = dm_lab(&["decompose", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_thread_cap_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dm-lab"))
        .args(["validate", "--generator", "squared-walk", "--depth", "3", "--out"])
        .arg(dir.path())
        .env("DM_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_dm-lab"))
        .args(["validate", "--generator", "squared-walk", "--depth", "3", "--out"])
        .arg(dir.path())
        .env("DM_LAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn flags_override_the_config() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"generator": "random", "seed": 1, "depth": 5, "atoms": 6}"#).unwrap();
    let out = dm_lab(&["decompose", "--config", config.to_str().unwrap(), "--depth", "3"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("decompose.json"));
    assert_eq!(report["levels"].as_array().unwrap().len(), 3);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("decompose", vec!["--generator", "random", "--seed", "9", "--depth", "5"]),
        ("ui", vec!["--generator", "ground-truth", "--seed", "3", "--depth", "5"]),
        ("komlos", vec!["--generator", "random", "--seed", "4", "--depth", "5"]),
        ("convergence", vec!["--generator", "squared-walk", "--depth", "6"]),
        ("validate", vec!["--generator", "ground-truth", "--seed", "5", "--depth", "4"]),
    ];
    for (cmd, flags) in runs {
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        let args: Vec<&str> = std::iter::once(cmd).chain(flags).collect();
        let oa = dm_lab(&args, a.path());
        let ob = dm_lab(&args, b.path());
        assert_eq!(oa.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&oa.stderr));
        assert_eq!(oa.stdout.len(), ob.stdout.len());
        let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let x = std::fs::read(a.path().join(&name)).unwrap();
            let y = std::fs::read(b.path().join(&name)).unwrap();
            assert_eq!(x, y, "{cmd}: {name:?} differs");
        }
    }
}
