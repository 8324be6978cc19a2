use std::fs;
use std::process::Command;

use lkstab_cli::{
    cmd_analyze, cmd_fluid, cmd_simulate, cmd_statediagram, config_hash, load, parse, CliError,
    Overrides, Scenario,
};
use lkstab_core::scenario::{four_queue_route, preset, PRESET_NAMES};
use lkstab_core::statespace::{self, EdgeKind};

fn scenario(name: &str, dir: &std::path::Path) -> Scenario {
    let ov = Overrides {
        out: Some(dir.to_path_buf()),
        ..Overrides::default()
    };
    Scenario::new(preset(name).unwrap(), &ov).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lkstab"))
}

#[test]
fn every_preset_loads_and_analyzes() {
    let dir = tempfile::tempdir().unwrap();
    for name in PRESET_NAMES {
        let sc = scenario(name, dir.path());
        let out = cmd_analyze(&sc).unwrap();
        assert!(out.report.contains("K = "), "{name}");
    }
}

#[test]
fn analyze_reports_the_example_utilization() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_analyze(&scenario("lu-kumar-lq", dir.path())).unwrap();
    assert!(out.report.contains("rho = 0.5333"), "{}", out.report);
    assert!(out.report.contains("rho = 0.8000"));
    assert!(out.report.contains("utilization: stable"));
    assert!(out.report.contains("topology: acyclic"));
    assert!(dir.path().join("analysis.json").exists());
}

#[test]
fn tripled_arrivals_are_unstable() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = preset("lu-kumar-lq").unwrap();
    doc.network = four_queue_route(1.2, [3.0, 1.0, 1.0, 1.0]);
    let sc = Scenario::new(doc, &Overrides {
        out: Some(dir.path().into()),
        ..Overrides::default()
    })
    .unwrap();
    let out = cmd_analyze(&sc).unwrap();
    assert!(out.report.contains("rho = 2.4000"), "{}", out.report);
    assert!(out.report.contains("utilization: unstable"));
}

#[test]
fn closed_cycle_is_a_validation_error() {
    let mut doc = preset("ldq-cycle").unwrap();
    doc.network.routing = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let err = Scenario::new(doc, &Overrides::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("NotOpen"), "{err}");
}

#[test]
fn load_needs_exactly_one_source() {
    assert_eq!(load(None, None).unwrap_err().exit_code(), 2);
    assert_eq!(load(None, Some("nope")).unwrap_err().exit_code(), 2);
    let p = std::path::Path::new("x.json");
    assert!(matches!(load(Some(p), Some("ldq-cycle")), Err(CliError::Usage(_))));
}

#[test]
fn documents_round_trip_and_reject_unknown_keys() {
    for name in PRESET_NAMES {
        let doc = preset(name).unwrap();
        let text = serde_json::to_string_pretty(&doc).unwrap();
        let back = parse(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(config_hash(&back), config_hash(&doc));
    }
    let mut v = serde_json::to_value(preset("ldq-cycle").unwrap()).unwrap();
    v["sim"]["bogus"] = serde_json::json!(true);
    let err = parse(&v.to_string()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn seed_override_changes_the_hash() {
    let a = Scenario::new(preset("lu-kumar-lq").unwrap(), &Overrides::default()).unwrap();
    let b = Scenario::new(preset("lu-kumar-lq").unwrap(), &Overrides {
        seed: Some(99),
        ..Overrides::default()
    })
    .unwrap();
    assert_eq!(b.doc.sim.seed, 99);
    assert_ne!(config_hash(&a.doc), config_hash(&b.doc));
    assert_eq!(config_hash(&a.doc).len(), 64);
}

#[test]
fn fluid_writes_a_trajectory_ending_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_fluid(&scenario("lu-kumar-lq", dir.path())).unwrap();
    assert!(out.report.contains("terminal: Drained"), "{}", out.report);
    let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,X1,X2,X3,X4,state,alpha1,alpha2"
    );
    let last = lines.last().unwrap();
    assert!(last.contains("(-|-)"), "{last}");
}

#[test]
fn fluid_cycle_stalls_and_priority_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_fluid(&scenario("ldq-cycle", dir.path())).unwrap();
    assert!(out.report.contains("terminal: Stalled"), "{}", out.report);
    let err = cmd_fluid(&scenario("priority-unstable", dir.path())).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn simulate_writes_snapshots_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = preset("lu-kumar-lq").unwrap();
    doc.sim.replications = 2;
    doc.sim.horizon = 300.0;
    doc.sim.r_list.clear();
    let sc = Scenario::new(doc, &Overrides {
        out: Some(dir.path().into()),
        ..Overrides::default()
    })
    .unwrap();
    let out = cmd_simulate(&sc).unwrap();
    assert!(out.report.contains("seed 1:") && out.report.contains("seed 2:"));
    let snaps = fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    assert!(snaps.starts_with("seed,t,X1,X2,X3,X4,arrivals,departures,in_system\n"));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 1);
    assert!(meta["rng_layout"].as_str().unwrap().contains("ChaCha8"));
    assert_eq!(meta["config_hash"].as_str().unwrap(), config_hash(&sc.doc));
    let first = snaps.clone();
    cmd_simulate(&sc).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("snapshots.csv")).unwrap(), first);
}

#[test]
fn statediagram_of_the_example_network() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = scenario("lu-kumar-lq", dir.path());
    sc.samples = 50;
    let out = cmd_statediagram(&sc).unwrap();
    assert!(out.report.starts_with("16 nodes"), "{}", out.report);
    assert!(out.report.contains(" 0 loops"), "{}", out.report);
    assert!(out.report.contains("impossible = true"));
    let nodes = fs::read_to_string(dir.path().join("nodes.csv")).unwrap();
    assert_eq!(nodes.lines().count(), 17);
    let dot = fs::read_to_string(dir.path().join("diagram.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("peripheries=2"));
}

#[test]
fn jump_edge_when_lambda_plus_mu2_below_mu4() {
    // lambda + mu2 < mu4: queue 2 catches up from (1|4) but (1,2|4) is infeasible
    let mut doc = preset("lu-kumar-lq").unwrap();
    doc.network = four_queue_route(0.4, [3.0, 1.0, 1.0, 2.0]);
    let sc = Scenario::new(doc, &Overrides::default()).unwrap();
    let d = statespace::diagram(&sc.net, &sc.dq, Default::default()).unwrap();
    let from = 0b1001;
    let to = 0b1010;
    assert!(
        d.edges
            .iter()
            .any(|e| e.from == from && e.to == to && e.kind == EdgeKind::Jump),
        "{:?}",
        d.edges.iter().filter(|e| e.from == from).collect::<Vec<_>>()
    );
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bin()
        .args(["analyze", "--preset", "lu-kumar-lq", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("rho = 0.8000"));

    let mut doc = preset("ldq-cycle").unwrap();
    doc.network.routing = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let path = dir.path().join("closed.json");
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let bad = bin().args(["analyze", "--scenario"]).arg(&path).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("NotOpen"));

    let none = bin().args(["fluid"]).output().unwrap();
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn schema_lists_every_document_key() {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../schema/scenario.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut doc = preset("priority-unstable").unwrap();
    doc.name = Some("all fields".into());
    doc.sim.x0 = Some(vec![1, 1, 1, 1]);
    let v = serde_json::to_value(&doc).unwrap();
    let keys = |o: &serde_json::Value| {
        let mut k: Vec<String> = o.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    assert_eq!(keys(&schema["properties"]), keys(&v));
    for section in ["network", "policy", "fluid", "sim", "outputs"] {
        assert_eq!(keys(&schema["properties"][section]["properties"]), keys(&v[section]), "{section}");
        assert_eq!(schema["properties"][section]["additionalProperties"], false);
    }
}
