use std::path::Path;
use std::process::{Command, Output};

fn tbrw(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbrw"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn with_config(sub: &str, json: &str, dir: &Path, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{sub}.json"));
    std::fs::write(&cfg, json).unwrap();
    let out = dir.join(format!("out-{sub}"));
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    tbrw(&args, dir)
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn bad_config_exits_with_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = with_config("simulate", r#"{"params":{"rho":-2,"nu":{"type":"point_mass","m":1}}}"#, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("params"));

    let o = with_config("urn", r#"{"params":{"rho":3,"nu":{"type":"point_mass","m":1}},"colour":1}"#, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn couple_rejects_the_wrong_order() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"params":{"rho":3,"nu":{"type":"point_mass","m":1}},"reps":4,"horizon":100,
        "couple":{"dominated":{"rho":4,"nu":{"type":"point_mass","m":1}}}}"#;
    assert_eq!(with_config("couple", json, dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn figure_preset_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig");
    let o = tbrw(&["simulate", "--preset", "figure1", "--horizon", "2000", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_rows(&out.join("report.csv")).len(), 3);
    let curves = std::fs::read_dir(out.join("curves")).unwrap().count();
    assert_eq!(curves, 3);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "simulate");
    assert_eq!(summary["schema_version"], 1);
}

#[test]
fn phase_scan_labels_each_regime() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"params":{"rho":2,"nu":{"type":"point_mass","m":1}},"rho_grid":[2.0,2.5,2.95,3.0,3.05,3.5],
        "reps":4,"phase_scan":{"n":5000}}"#;
    let o = with_config("phase-scan", json, dir.path(), &["--workers", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let phases: Vec<String> = read_rows(&dir.path().join("out-phase-scan/report.csv"))
        .iter()
        .map(|r| r[1].to_string())
        .collect();
    assert_eq!(phases, ["T", "T", "T", "NR", "PR", "PR"]);
}

#[test]
fn spectral_report_has_small_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"params":{"rho":4,"nu":{"type":"point_mass","m":1}},"spectral":{"L":[80]}}"#;
    let o = with_config("spectral", json, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let path = dir.path().join("out-spectral/report.csv");
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = |name| header.iter().position(|h| h == name).unwrap();
    let row = read_rows(&path).into_iter().find(|r| &r[col("L")] == "80").unwrap();
    assert!(row[col("eigen_residual")].parse::<f64>().unwrap() < 1e-9);
    assert!((row[col("spectral_radius")].parse::<f64>().unwrap() - 0.5).abs() < 1e-4);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"params":{"rho":3,"nu":{"type":"point_mass","m":1}},"reps":500,"seed":5}"#;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    std::fs::write(dir.path().join("urn.json"), json).unwrap();
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = tbrw(&["urn", "--config", "urn.json", "--out", out.to_str().unwrap(), "--workers", workers], dir.path());
        assert_eq!(o.status.code(), Some(0));
    }
    for name in ["report.csv", "functional.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let o = tbrw(&["urn", "--config", "urn.json", "--out", "c", "--seed", "6"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(std::fs::read(a.join("report.csv")).unwrap(), std::fs::read(dir.path().join("c/report.csv")).unwrap());
}
