use std::path::Path;
use std::process::Command;

fn pororef(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pororef")).args(args).output().expect("spawn pororef")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn refconf_writes_summary_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = pororef(&["refconf", "--mesh-n", "2", "--tol", "1e-4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("refconf_summary.json")).unwrap()).unwrap();
    for key in ["iterations", "newton_iterations", "final_rel_residual", "phi_avg"] {
        assert!(summary.get(key).is_some(), "{key}");
    }
    assert!(summary["final_rel_residual"].as_f64().unwrap() <= 1e-4);
    let echo = std::fs::read_to_string(out.join("effective_config.toml")).unwrap();
    assert!(echo.contains("mesh_cells = [2, 2]"), "{echo}");
    assert!(echo.contains("tol = 0.0001"), "{echo}");
}

#[test]
fn bad_value_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "dt = -1\n");
    let o = pororef(&["forward", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dt"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "dtt = 0.01\n");
    assert_eq!(pororef(&["forward", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(pororef(&["forward", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn newton_failure_exits_with_divergence_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write(dir.path(), "c.toml", "mesh_cells = [1, 1]\nnewton_max_iter = 1\nnewton_abs_tol = 1e-30\nnewton_rel_tol = 1e-30\n");
    let o = pororef(&["forward", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_and_oracle_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let cfg = write(dir.path(), "c.toml", "problem = \"refconf\"\nmesh_cells = [2, 2]\ntol = 1e-5\n");
    let o = pororef(&["aa-sweep", "--config", &cfg, "--aa-depth", "0,1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("aa_sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("depth,iterations"));
    let it = |r: &str| r.split(',').nth(1).unwrap().parse::<usize>().unwrap();
    assert!(it(rows[2]) < it(rows[1]));

    let o = pororef(&["oracle", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let oc = std::fs::read_to_string(out.join("oracle.csv")).unwrap();
    assert_eq!(oc.lines().next().unwrap(), "Time,phiAvg,lambda,stretch_a,stretch_b");
    assert_eq!(oc.lines().nth(1).unwrap(), "0,0.1,0,1,1");
}
