use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"{
    "kernel": {"gaussian": {"width": 1.0}},
    "mu": {"atoms": [[0.0, 1.0], [0.5, 0.5]]},
    "m": {"atoms": [[0.0, 1.0]]},
    "initial": "atoms",
    "horizon": 0.2,
    "dt": 0.002,
    "delta": 0.02,
    "replicates": 4,
    "seed": 7
}"#;

fn excursim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_excursim"))
        .args(args)
        .env_remove("EXCURSIM_SEED")
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("scenario.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn simulate(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    excursim(&args)
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn simulate_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(simulate(&config, &a, &["--trace-excursions"]).status.success());
    assert!(simulate(&config, &b, &["--trace-excursions", "--jobs", "1"]).status.success());
    for name in ["trajectory.csv", "summary.csv", "excursions.csv", "manifest.json"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs");
    }
    let summary = read(&a, "summary.csv");
    assert!(summary.starts_with("time,mean_mass,var_mass,atom_count_mean\n"));
    assert_eq!(summary.lines().count(), 5);
    let manifest: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["timestamp"].is_null());
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn seed_flag_beats_env_beats_config() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let seed_of = |dir: &Path| -> u64 {
        let m: serde_json::Value = serde_json::from_str(&read(dir, "manifest.json")).unwrap();
        m["seed"].as_u64().unwrap()
    };
    let env_out = tmp.path().join("env");
    let status = Command::new(env!("CARGO_BIN_EXE_excursim"))
        .args(["simulate", "--config", &config, "--out", env_out.to_str().unwrap()])
        .env("EXCURSIM_SEED", "11")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(seed_of(&env_out), 11);
    let flag_out = tmp.path().join("flag");
    let status = Command::new(env!("CARGO_BIN_EXE_excursim"))
        .args(["simulate", "--config", &config, "--out", flag_out.to_str().unwrap(), "--seed", "12"])
        .env("EXCURSIM_SEED", "11")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(seed_of(&flag_out), 12);
    assert_ne!(read(&env_out, "trajectory.csv"), read(&flag_out, "trajectory.csv"));
}

#[test]
fn empty_scenario_gives_header_only_csvs() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "{}");
    let out = tmp.path().join("out");
    assert!(simulate(&config, &out, &[]).status.success());
    assert_eq!(read(&out, "trajectory.csv"), "replicate,time,atom_id,location,mass\n");
    let summary = read(&out, "summary.csv");
    for line in summary.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(&fields[1..], ["0.0", "0.0", "0.0"]);
    }
}

#[test]
fn malformed_config_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    for text in [r#"{"sigma": "one"}"#, r#"{"delta": 0.0105}"#, "not json"] {
        let config = write_config(tmp.path(), text);
        let o = simulate(&config, &out, &[]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
        assert!(!out.exists());
    }
}

#[test]
fn non_empty_out_needs_force() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    assert_eq!(simulate(&config, &out, &[]).status.code(), Some(2));
    assert!(!out.join("trajectory.csv").exists());
    assert!(simulate(&config, &out, &["--force"]).status.success());
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let o = excursim(&["verify", "--suite", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown suite"));
}

#[test]
fn verify_feller_suite_writes_report() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("v");
    let o = excursim(&["verify", "--suite", "feller", "--scale", "0.05", "--out", out.to_str().unwrap()]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
    let reports: serde_json::Value = serde_json::from_str(&read(&out, "report.json")).unwrap();
    let reports = reports.as_array().unwrap();
    assert!(reports.iter().any(|r| r["criterion"] == 1));
    assert!(reports.iter().all(|r| r["suite"] == "feller"));
}

#[test]
fn verify_scenario_config() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), &SMALL.replace("\"replicates\": 4", "\"replicates\": 200"));
    let o = excursim(&["verify", "--config", &config]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
    let reports: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let names: Vec<&str> = reports.as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert!(names.iter().any(|n| n.starts_with("martingale_mean")));
    assert!(names.iter().any(|n| n.starts_with("quadratic_variation")));
}

#[test]
fn immigration_demo_mean_mass_grows_linearly() {
    let tmp = TempDir::new().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/immigration.json");
    let out = tmp.path().join("out");
    let o = simulate(config, &out, &[]);
    assert!(o.status.success());
    // ⟨1,μ⟩ = ⟨1,m⟩ = 1 and q ≡ 1.
    let stdout = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<f64>> = stdout
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let (t, mean, se) = (r[0], r[1], r[2]);
        assert!((mean - (1.0 + t)).abs() <= 3.0 * se, "t={t}: {mean} ± {se}");
    }
}
