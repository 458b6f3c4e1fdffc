use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdpse::measurements::{
    measurements_to_records, synthesize, Location, MeasurementKind, MeasurementPlan, NoiseLevel,
    NoiseSpec,
};
use sdpse::network::NetworkModel;
use sdpse::synthetic;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn sdpse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdpse"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Ten-bus readings with gross errors on the injections of the given nodes.
fn corrupted_ten_bus(dir: &Path, nodes: &[usize]) -> PathBuf {
    let model = NetworkModel::from_document(&synthetic::ten_bus()).unwrap();
    let truth = synthetic::truth_state(&model, 1);
    let mut meas = synthesize(
        &model,
        &truth,
        &MeasurementPlan::full(&model),
        &NoiseSpec::level(NoiseLevel::L2, 3),
    )
    .unwrap();
    for &k in nodes {
        let m = meas
            .iter_mut()
            .find(|m| m.kind == MeasurementKind::PInj && m.location == Location::Node(k))
            .unwrap();
        m.value += 40.0 * m.sigma;
    }
    let file = dir.join("measurements.json");
    std::fs::write(
        &file,
        serde_json::to_string_pretty(&measurements_to_records(&model, &meas)).unwrap(),
    )
    .unwrap();
    file
}

#[test]
fn estimate_writes_state_report_and_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdpse(&[
        "estimate",
        "--network",
        path(&fixture("ten_bus.network.json")),
        "--state",
        path(&fixture("ten_bus.state.json")),
        "--noise-level",
        "0",
        "--placement",
        "full",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "estimate.json",
        "residuals.json",
        "estimate_report.json",
        "stats.json",
        "histogram.csv",
    ] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let stats = read_json(&dir.path().join("stats.json"));
    assert!(stats["vmag_pu"]["maximum"].as_f64().unwrap() < 1e-5);
    let states = read_json(&dir.path().join("estimate.json"));
    assert_eq!(states.as_array().unwrap().len(), 10);
}

#[test]
fn one_sided_placement_without_repair_is_unobservable() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdpse(&[
        "estimate",
        "--network",
        path(&fixture("ieee13.network.json")),
        "--state",
        path(&fixture("ieee13.state.json")),
        "--noise-level",
        "0",
        "--no-repair",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_inputs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"buses\": 3}").unwrap();
    let out = sdpse(&[
        "partition",
        "--network",
        path(&broken),
        "--auto-partition-size",
        "3",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 2);

    let out = sdpse(&[
        "baddata",
        "--network",
        path(&fixture("ten_bus.network.json")),
        "--state",
        path(&fixture("ten_bus.state.json")),
        "--noise-level",
        "1",
        "--placement",
        "full",
        "--threshold",
        "0",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn decoupled_estimation_without_reference_angles_fails_closed() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdpse(&[
        "estimate",
        "--network",
        path(&fixture("ten_bus.network.json")),
        "--state",
        path(&fixture("ten_bus.state.json")),
        "--noise-level",
        "0",
        "--placement",
        "full",
        "--auto-partition-size",
        "4",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("anchor"));
}

#[test]
fn bad_data_names_the_corrupted_reading() {
    let dir = tempfile::tempdir().unwrap();
    let meas = corrupted_ten_bus(dir.path(), &[4]);
    let out = sdpse(&[
        "baddata",
        "--network",
        path(&fixture("ten_bus.network.json")),
        "--state",
        path(&fixture("ten_bus.state.json")),
        "--measurements",
        path(&meas),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("baddata.json"));
    let culprits = report["culprits"].as_array().unwrap();
    assert_eq!(culprits.len(), 1);
    assert_eq!(culprits[0]["measured"]["kind"], "P_inj");
    assert_eq!(culprits[0]["measured"]["bus"], "5");
}

#[test]
fn exceeding_the_combination_budget_exits_with_budget_code() {
    let dir = tempfile::tempdir().unwrap();
    let meas = corrupted_ten_bus(dir.path(), &[1, 7]);
    let out = sdpse(&[
        "baddata",
        "--network",
        path(&fixture("ten_bus.network.json")),
        "--measurements",
        path(&meas),
        "--max-combinations",
        "1",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn auto_partition_proposes_unangled_anchors() {
    let dir = tempfile::tempdir().unwrap();
    let plan_dir = dir.path().join("plan");
    let out = sdpse(&[
        "partition",
        "--network",
        path(&fixture("feeder110.network.json")),
        "--auto-partition-size",
        "37",
        "--out",
        path(&plan_dir),
    ]);
    assert_eq!(code(&out), 0);
    let plan = read_json(&plan_dir.join("plan.json"));
    assert_eq!(plan["sub_networks"].as_array().unwrap().len(), 3);
    assert_eq!(plan["tie_lines"].as_array().unwrap().len(), 2);
    // proposed anchors carry no angle until one is supplied
    assert!(plan["anchors"]
        .as_array()
        .unwrap()
        .iter()
        .all(|a| a["ref_angle_deg"].is_null()));
}

#[test]
fn stats_rejects_mismatched_node_sets() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdpse(&[
        "stats",
        "--estimate",
        path(&fixture("ten_bus.state.json")),
        "--state",
        path(&fixture("radial41.state.json")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
}
