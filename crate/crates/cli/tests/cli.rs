use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn hullkam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hullkam"))
        .args(args)
        .env_remove("HULLKAM_OUT_DIR")
        .output()
        .expect("binary runs")
}

#[test]
fn solve_then_certify_and_residual() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = configs().join("desk.toml");
    let cfg = cfg.to_str().unwrap();

    let o = hullkam(&["solve", "--config", cfg, "--out", out, "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "residuals.csv", "hull.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(report.contains("\"converged\": true"));

    let o = hullkam(&["certify", "--config", cfg, "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("certificate.json").exists());

    let o = hullkam(&["residual", "--config", cfg, "--out", out, "--quiet"]);
    assert!(o.status.success());
    assert!(dir.path().join("residual.json").exists());
}

#[test]
fn solve_output_is_deterministic() {
    let cfg = configs().join("desk.toml");
    let read = || {
        let dir = tempfile::tempdir().unwrap();
        let o = hullkam(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--quiet"]);
        assert!(o.status.success());
        std::fs::read(dir.path().join("hull.txt")).unwrap()
    };
    assert_eq!(read(), read());
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(configs().join("desk.toml"))
        .unwrap()
        .replace("beta = 2.0", "beta = 0.5");
    std::fs::write(&bad, text).unwrap();
    let o = hullkam(&["solve", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("beta"));

    let o = hullkam(&["solve", "--config", "/nonexistent/x.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_hull_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("desk.toml");
    let o = hullkam(&["certify", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
