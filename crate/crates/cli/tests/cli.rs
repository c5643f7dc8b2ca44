use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn geocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geocal"))
        .args(args)
        .env_remove("GEOCAL_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Noiseless 3-D fixture; returns (measurements, truth).
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let (m, t) = (dir.join("meas.json"), dir.join("truth.json"));
    let o = geocal(&["simulate", "--seed", "4", "--nodes", "5", "--events", "10", "--out", s(&m), "--truth-out", s(&t)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (m, t)
}

#[test]
fn noiseless_fixture_calibrates() {
    let dir = tempfile::tempdir().unwrap();
    let (m, t) = fixture(dir.path());
    let o = geocal(&["calibrate", s(&m), "--truth", s(&t)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(run["outcome"]["success"], true);
    assert_eq!(run["result"]["converged"], true);
    assert_eq!(run["estimator"], "ray");
}

#[test]
fn iteration_cap_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _) = fixture(dir.path());
    let o = geocal(&["calibrate", s(&m), "--max-iterations", "1"]);
    assert_eq!(code(&o), 2);
    let run: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(run["result"]["converged"], false);
}

#[test]
fn config_file_sets_solver_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _) = fixture(dir.path());
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[solver]\nmax_iterations = 1\n").unwrap();
    assert_eq!(code(&geocal(&["calibrate", s(&m), "--config", s(&cfg)])), 2);
    assert_eq!(code(&geocal(&["calibrate", s(&m), "--config", s(&cfg), "--max-iterations", "2000"])), 0);
}

#[test]
fn malformed_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let (m, _) = fixture(dir.path());
    let text = std::fs::read_to_string(&m).unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, &text[..text.len() / 2]).unwrap();
    let o = geocal(&["calibrate", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    assert_eq!(code(&geocal(&["calibrate", s(&dir.path().join("missing.json"))])), 1);
    assert_eq!(code(&geocal(&["calibrate", s(&m), "--costs", "nonsense"])), 1);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "unknown_key = 3\n").unwrap();
    assert_eq!(code(&geocal(&["calibrate", s(&m), "--config", s(&cfg)])), 1);
}

#[test]
fn planar_measurements_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let (m, t) = (dir.path().join("m.json"), dir.path().join("t.json"));
    let o = geocal(&["simulate", "--room", "10,10", "--seed", "2", "--out", s(&m), "--truth-out", s(&t)]);
    assert_eq!(code(&o), 0);
    let o = geocal(&["calibrate", s(&m), "--truth", s(&t), "--init", "ground-truth"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(run["outcome"]["success"], true);
}

#[test]
fn bench_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("a.json");
    let run = || {
        let o = geocal(&[
            "bench", "success-ratio", "--nodes", "4", "--events", "6,8", "--trials", "3", "--costs", "ray,jacob13", "--seed",
            "5", "--report", s(&report),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(&report).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);

    let csv = geocal(&["plot-data", s(&dir.path().join("a.json"))]);
    assert_eq!(code(&csv), 0);
    let text = String::from_utf8(csv.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "cost,n_nodes,n_events,sigma_doa,trials,success_ratio");
    assert_eq!(lines.len(), 1 + 2 * 2);
}

#[test]
fn seed_env_var_overrides_config_but_not_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 3\n").unwrap();
    let seed_of = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_geocal"));
        cmd.args(["simulate", "--config", s(&cfg), "--nodes", "3", "--events", "4"]).args(args).env_remove("GEOCAL_SEED");
        if let Some(v) = env {
            cmd.env("GEOCAL_SEED", v);
        }
        let o = cmd.output().unwrap();
        assert_eq!(code(&o), 0);
        serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap()["seed"].clone()
    };
    let from_file = seed_of(&[], None);
    let from_env = seed_of(&[], Some("11"));
    let from_flag = seed_of(&["--seed", "3"], Some("11"));
    assert_ne!(from_file, from_env);
    assert_eq!(from_file, from_flag);
}

#[test]
fn rmse_plot_data_has_three_rows_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let plot = dir.path().join("p.csv");
    let o = geocal(&[
        "bench", "rmse", "--trials", "2", "--sigma-doa", "0,0.05", "--costs", "ray,wozniak19", "--report", s(&report),
        "--plot-data", s(&plot),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(plot).unwrap();
    assert!(text.starts_with("cost,sigma_doa,set,rmse\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 3);
}

#[test]
fn empty_report_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let o = geocal(&["bench", "success-ratio", "--nodes", "3", "--events", "4", "--trials", "1", "--costs", "ray", "--report", s(&report)]);
    assert_eq!(code(&o), 0);
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    v["cells"] = serde_json::json!([]);
    std::fs::write(&report, v.to_string()).unwrap();
    assert_eq!(code(&geocal(&["plot-data", s(&report)])), 1);
}
