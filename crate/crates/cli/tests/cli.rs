use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cmdemod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmdemod"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_colocated(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        r#"
scenario = "colocated"
runs = 3
horizon = 20.0
master_seed = 5

[symbols]
amplitudes = [11.0, 58.0]
duration = 15.0

[receptors]
g_plus = 0.02
g_minus = 0.5
count = 100
"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn fit_hill_prints_parameters() {
    let out = cmdemod(&["fit-hill", "-a", "11", "58"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    let h = v[1]["H"].as_f64().unwrap();
    assert!(h > 20.0 && h < 40.0, "{h}");
}

#[test]
fn fit_hill_rejects_small_amplitude() {
    assert_eq!(cmdemod(&["fit-hill", "-a", "2"]).status.code(), Some(2));
}

#[test]
fn counterexample_command_passes() {
    let out = cmdemod(&["check-appendix-c", "--runs", "50"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], true);
}

#[test]
fn ber_outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_colocated(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let out = cmdemod(&["ber", "-c", &cfg, "-o", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["ber.csv", "summary.json", "config.snapshot", "trajectories/symbol0_run0.events"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let ber = fs::read_to_string(a.join("ber.csv")).unwrap();
    assert!(ber.starts_with("method,time,errors_0,errors_1,runs,ber,threshold\n"));
    // 40 decision times per method, three methods
    assert_eq!(ber.lines().count(), 1 + 3 * 40);
}

#[test]
fn simulate_then_demod() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_colocated(tmp.path());
    let dir = tmp.path().join("sim");
    let d = dir.to_str().unwrap();
    assert!(cmdemod(&["simulate", "-c", &cfg, "-o", d, "--symbol", "1"]).status.success());
    let events = dir.join("trajectories/symbol1_run0.events");
    let out = cmdemod(&["demod", "-c", &cfg, "-o", d, "--events", events.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let decisions = fs::read_to_string(dir.join("decisions.csv")).unwrap();
    assert!(decisions.trim_end().ends_with(",1"), "{decisions}");
    assert!(dir.join("filters/history0.csv").exists());
}

#[test]
fn short_trajectory_is_a_simulation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_colocated(tmp.path());
    let events = tmp.path().join("short.events");
    fs::write(&events, "# cmdemod event list v1\nhorizon 5\nspecies S X Xs\ninitial 58 100 0\n").unwrap();
    let out = cmdemod(&["demod", "-c", &cfg, "--events", events.to_str().unwrap(), "-o", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "scenario = \"colocated\"\nruns = 0\n").unwrap();
    let b = bad.to_str().unwrap();
    assert_eq!(cmdemod(&["ber", "-c", b]).status.code(), Some(2));
    assert_eq!(cmdemod(&["ber", "-c", "/does/not/exist.toml"]).status.code(), Some(2));
    fs::write(&bad, "scenario = \"colocated\"\nunknown_key = 3\n").unwrap();
    assert_eq!(cmdemod(&["baseline", "-c", b]).status.code(), Some(2));
}

#[test]
fn steady_state_writes_reference_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/diffusion.toml");
    let out = cmdemod(&["steady-state", "-c", cfg, "-o", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let m0 = v[0]["receiver_mean"].as_f64().unwrap();
    let m1 = v[1]["receiver_mean"].as_f64().unwrap();
    assert!((m1 / m0 - 4.0).abs() < 1e-9);
    let sigma = fs::read_to_string(tmp.path().join("sigma1.csv")).unwrap();
    assert!(sigma.starts_with("time,value\n"));
}

#[test]
fn example_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let cfg = cmdemod::config::ExperimentConfig::load(&p);
        assert!(cfg.is_ok(), "{}: {:?}", p.display(), cfg.err());
        cfg.unwrap().validate().unwrap();
    }
}
