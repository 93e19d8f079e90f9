use serde_json::json;

use poscm::models::LayeredNetSpec;
use poscm_cli::catalog::ModelFile;
use poscm_cli::{run, Experiment, ProtocolConfig};

fn cfg(experiment: Experiment, params: serde_json::Value) -> ProtocolConfig {
    let mut c = ProtocolConfig::new(experiment, vec![0, 1]);
    c.params = params;
    c
}

fn column(record: &poscm_cli::RunRecord, table: &str, col: &str) -> Vec<f64> {
    record.table(table).unwrap().column(col).unwrap().iter().map(|x| x.parse().unwrap()).collect()
}

#[test]
fn exp1_self_comparison_has_zero_statistic() {
    let r = run(&cfg(Experiment::Exp1Twin, json!({"swap": [0, 0], "t_ms": 60.0}))).unwrap();
    assert!(column(&r, "exp1_ks", "statistic").iter().all(|d| *d == 0.0));
    assert!(r.check("beta-latent-indistinguishable").unwrap().passed);
    assert!(!r.check("beta-observed-distinguishes").unwrap().passed);
}

#[test]
fn exp2_identical_pair_has_zero_mmd_and_uncalibrated_pair_shifts_the_level() {
    let same = run(&cfg(Experiment::Exp2Confound, json!({"block": 0.0, "t_ms": 100.0}))).unwrap();
    assert!(column(&same, "exp2_mmd", "mmd2").iter().all(|d| d.abs() < 1e-12));

    // Node-level p-values of the steady potential; Delta V is gauge-free and
    // misses the uncalibrated pair.
    let node_level_p = |calibrate: bool| {
        let r = run(&cfg(Experiment::Exp2Confound, json!({"calibrate": calibrate, "g_test": [], "permutations": 200}))).unwrap();
        column(&r, "exp2_mmd", "level_p_value")
    };
    assert!(node_level_p(true).iter().all(|p| *p > 0.05));
    assert!(node_level_p(false).iter().all(|p| *p < 0.05));
}

#[test]
fn exp3_without_synapses_gives_a_flat_curve() {
    let mut net = LayeredNetSpec::retina();
    for s in net.connections.iter_mut().flat_map(|c| c.synapse.iter_mut()) {
        s.g_max = 0.0;
    }
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("net.json");
    std::fs::write(&model, serde_json::to_vec(&ModelFile::Layered { net }).unwrap()).unwrap();
    let mut c = cfg(Experiment::Exp3Kernels, json!({"eccentricities": [-1.2, -2.0], "t_ms": 100.0}));
    c.model_ref = Some(model);
    let r = run(&c).unwrap();
    assert!(column(&r, "exp3_transfer", "mean_dv").iter().all(|d| d.abs() < 1e-9));
    assert!(r.check("transfer-monotone").unwrap().passed);
}

#[test]
fn exp3_composition_follows_the_sweep() {
    let r = run(&cfg(Experiment::Exp3Kernels, json!({"eccentricities": [-1.2, -3.5], "clamp_values": [-70.0, -50.0, -40.0, -20.0], "t_ms": 60.0}))).unwrap();
    let t = r.table("exp3_composition").unwrap();
    let count = |ecc: &str, pop: &str| -> f64 {
        t.rows.iter().filter(|row| row[0] == ecc && row[1] == pop).map(|row| row[3].parse::<f64>().unwrap()).sum()
    };
    assert_eq!(count("-1.2", "RGC"), 12.0);
    assert!(count("-3.5", "RGC") < count("-1.2", "RGC"));
    assert!(count("-3.5", "PR") < count("-1.2", "PR"));
}

#[test]
fn runs_are_reproducible() {
    let c = cfg(Experiment::Probe, json!({"min_effect": 0.3}));
    let mut c = c;
    c.n_per = 100;
    let a = run(&c).unwrap();
    let b = run(&c).unwrap();
    assert_eq!(a.tables, b.tables);
    assert_eq!(a.config_hash, b.config_hash);
}

#[test]
fn equiv_reports_the_distinguishing_regime() {
    let mut c = cfg(
        Experiment::Equiv,
        json!({"twin": {"kind": "calibrated", "p": 0.5, "q0": 0.2, "q1": 0.8, "p_prime": 0.8}, "expect": "distinguished"}),
    );
    c.n_per = 5000;
    c.alpha = 0.01;
    c.regimes = serde_json::from_value(json!([
        {"label": "obs"},
        {"label": "copy+do1", "interventions": [
            {"type": "v_node", "node": 0, "value": 1.0},
            {"type": "v_edge_clamp", "source": 0, "target": 1, "message": [1.0, 1.0]}
        ]}
    ]))
    .unwrap();
    let r = run(&c).unwrap();
    assert!(r.passed(), "{:?}", r.checks);
    let v = r.table("equiv_verdicts").unwrap();
    assert!(v.rows.iter().all(|row| row[1] == "distinguished" && row[2] == "copy+do1"));
}

#[test]
fn iisc_flags_context_interventions_only() {
    let mut c = cfg(Experiment::Iisc, serde_json::Value::Null);
    c.n_per = 3000;
    c.regimes = serde_json::from_value(json!([
        {"label": "doV", "interventions": [{"type": "v_node", "node": 0, "value": 1.0}]},
        {"label": "doB", "interventions": [{"type": "beta_node", "node": 0, "value": 0.0}]}
    ]))
    .unwrap();
    let r = run(&c).unwrap();
    assert!(r.passed());
    let t = r.table("iisc").unwrap();
    let changed = |label: &str| t.rows.iter().filter(|row| row[1] == label && row[3] == "true").count();
    assert_eq!(changed("doV"), 0);
    assert!(changed("doB") > 0);
}
