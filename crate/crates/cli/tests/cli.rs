use std::fs;
use std::process::Command;

fn ellfit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ellfit"))
}

#[test]
fn fit_single_point_in_the_plane() {
    let out = ellfit()
        .args(["fit", "-d", "2", "-n", "1", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("Success"));
}

#[test]
fn fit_json_output() {
    let out = ellfit()
        .args(["fit", "-d", "20", "-n", "20", "--seed", "3", "--json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "Success");
    assert!(v["max_residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn degenerate_fit_exits_two() {
    // more constraints than symmetric 3x3 matrices have entries
    let out = ellfit()
        .args(["fit", "-d", "3", "-n", "8", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    let out = ellfit().args(["fit", "-d", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = ellfit().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = ellfit()
        .args(["fit", "-d", "1", "-n", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fit_then_verify_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("cloud.json");
    let q = dir.path().join("q.json");
    let out = ellfit()
        .args(["fit", "-d", "12", "-n", "9", "--seed", "5"])
        .arg("--cloud-out")
        .arg(&cloud)
        .arg("--emit-q")
        .arg(&q)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    let out = ellfit()
        .arg("verify")
        .arg("--cloud")
        .arg(&cloud)
        .arg("--q")
        .arg(&q)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );

    // the identity does not pass through the sampled points
    let identity: Vec<Vec<f64>> = (0..12)
        .map(|i| (0..12).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    fs::write(
        &q,
        serde_json::json!({ "d": 12, "q": identity }).to_string(),
    )
    .unwrap();
    let out = ellfit()
        .arg("verify")
        .arg("--cloud")
        .arg(&cloud)
        .arg("--q")
        .arg(&q)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_missing_file_is_io_error() {
    let out = ellfit()
        .args([
            "verify",
            "--cloud",
            "/nonexistent/c.json",
            "--q",
            "/nonexistent/q.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn smoke_config(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("smoke.json");
    let config = serde_json::json!({
        "d_values": [10],
        "n_fractions": [0.05],
        "trials_per_cell": 3,
        "master_seed": 42,
        "diagnostics_enabled": false,
        "output_path": dir.join("smoke.csv"),
        "worker_count": 2
    });
    fs::write(&path, config.to_string()).unwrap();
    path
}

#[test]
fn smoke_sweep_has_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = smoke_config(dir.path());
    let out = ellfit()
        .arg("sweep")
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("smoke.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(
        lines[0],
        "d,n,n_fraction,trial_index,seed,status,max_residual,q_min_eig,perturbation_norm,m_min_eig,eps_inf,delta_inf,wall_time_ms"
    );
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("smoke.csv.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["config"]["master_seed"], 42);
    assert!(meta["threshold_estimates"].get("10").is_some());
}

#[test]
fn sweep_out_flag_and_worker_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = smoke_config(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, workers) in [(&a, "1"), (&b, "4")] {
        let out = ellfit()
            .env("ELLIPSOID_WORKERS", workers)
            .arg("sweep")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(path)
            .arg("--no-timing")
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let out = ellfit()
        .env("ELLIPSOID_WORKERS", "zero")
        .arg("sweep")
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("worker_count"));
}

#[test]
fn malformed_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let config = serde_json::json!({
        "d_values": [3],
        "n_fractions": [0.05],
        "trials_per_cell": 1,
        "master_seed": 1,
        "diagnostics_enabled": false,
        "output_path": dir.path().join("x.csv"),
        "worker_count": 1
    });
    fs::write(&path, config.to_string()).unwrap();
    let out = ellfit()
        .arg("sweep")
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_values"));

    fs::write(&path, r#"{"d_values": [10], "bogus": 1}"#).unwrap();
    let out = ellfit()
        .arg("sweep")
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diagnose_json_schema() {
    let out = ellfit()
        .args(["diagnose", "-d", "20", "-n", "20", "--seed", "2", "--json"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in [
        "e1_holds",
        "m_inv_norm",
        "m_dev_norm",
        "e2_holds",
        "eps_inf",
        "e3_holds",
        "delta_inf",
    ] {
        assert!(v["events"].get(key).is_some(), "missing {key}");
    }
    for key in [
        "sample_count",
        "thresholds",
        "empirical_tail",
        "fitted_psi1",
        "fitted_psi2",
    ] {
        assert!(v["epsilon_tail"].get(key).is_some(), "missing {key}");
    }
    let out = ellfit()
        .args(["diagnose", "-d", "20", "-n", "20"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("E1"));
}
