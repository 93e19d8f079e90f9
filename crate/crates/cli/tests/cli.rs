use std::fs;
use std::path::Path;
use std::process::Command;

use poscm_cli::read_plot_data;

fn poscm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poscm"))
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const PROBE: &str = r#"{"experiment": "probe", "seeds": [0, 1], "nPer": 100, "params": {"min_effect": 0.3}}"#;

#[test]
fn run_writes_tables_sidecar_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", PROBE);
    let out = dir.path().join("out");
    let st = poscm().args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(out.join("probe.csv").is_file());
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    let (manifest, series) = read_plot_data(&out).unwrap();
    assert!(manifest.series.is_empty() && series.is_empty());
}

#[test]
fn identical_configs_give_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", PROBE);
    let mut tables = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let st = poscm()
            .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("POSCM_THREADS", threads)
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
        tables.push(fs::read(out.join("probe.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn seed_override_changes_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", PROBE);
    let out = dir.path().join("out");
    let st = poscm()
        .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed-override", "40"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["seeds"], serde_json::json!([40, 41]));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let run = |cfg: &Path| poscm().args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).output().unwrap();

    let failing = write(dir.path(), "f.json", r#"{"experiment": "probe", "seeds": [0], "nPer": 60, "params": {"min_accuracy": 1.5}}"#);
    let o = run(&failing);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL structure-readout"));

    let bad = write(dir.path(), "b.json", r#"{"experiment": "probe", "seeds": []}"#);
    assert_eq!(run(&bad).status.code(), Some(1));
    let missing = write(dir.path(), "m.json", r#"{"experiment": "probe", "seeds": [1], "modelRef": "nope.json"}"#);
    assert_eq!(run(&missing).status.code(), Some(1));
    let unparsable = write(dir.path(), "u.json", "{");
    assert_eq!(run(&unparsable).status.code(), Some(1));
    assert_eq!(run(&dir.path().join("absent.json")).status.code(), Some(1));
}

#[test]
fn model_ref_resolves_against_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", r#"{"kind": "random-binary", "n": 3}"#);
    let cfg = write(
        dir.path(),
        "p.json",
        r#"{"experiment": "probe", "seeds": [2], "nPer": 100, "modelRef": "model.json", "outDir": "res", "params": {"min_effect": 0.3}}"#,
    );
    let st = poscm().args(["run", cfg.to_str().unwrap()]).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(dir.path().join("res/probe.csv").is_file());
}

#[test]
fn check_prints_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", PROBE);
    let o = poscm().args(["check", cfg.to_str().unwrap()]).output().unwrap();
    assert!(o.status.success());
    let hash = String::from_utf8(o.stdout).unwrap();
    assert_eq!(hash.trim().len(), 64);
}

#[test]
fn exp3_emits_two_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "e.json",
        r#"{"experiment": "exp3-kernels", "seeds": [0], "params": {"eccentricities": [-1.2, -2.0], "t_ms": 80.0}}"#,
    );
    let out = dir.path().join("out");
    let st = poscm().args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status().unwrap();
    assert!(matches!(st.code(), Some(0) | Some(2)));
    let (manifest, series) = read_plot_data(&out).unwrap();
    assert_eq!(manifest.series.len(), 2);
    let names: Vec<&str> = series.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, ["exp3_composition", "exp3_transfer"]);
}

#[test]
fn shipped_protocols_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../protocols");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            poscm_cli::ProtocolConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 6);
}
