//! Command-line behaviour: outputs, exit codes and reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strandweave"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn presets_lists_models_and_clusters() {
    let o = run(&["presets"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["models"]["llama-25B"]["layers"], 28);
    assert_eq!(v["models"]["phi-42B"]["experts"], 16);
    assert!(v["clusters"]["a40"].is_object());
}

#[test]
fn missing_scenario_is_config_error() {
    let o = run(&["search"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--scenario"));
}

#[test]
fn malformed_scenario_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.json", "{\n  \"model\": \"llama-8B\",\n  \"clusterr\": \"a40\"\n}\n");
    let o = run(&["compare", "--scenario", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_preset_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.json",
        r#"{"model": "llama-1T", "cluster": "a40", "parallelism": {"dp": 8, "tp": 8}, "profile": {"archetype": "pcie_a40"}}"#,
    );
    let o = run(&["estimate", "--scenario", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("llama-1T"));
}

#[test]
fn unfoldable_layer_count_is_infeasible() {
    // 12 layers cannot be folded over 4 stages
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.json",
        r#"{"model": "llama-39B", "cluster": "a40", "parallelism": {"dp": 2, "tp": 8, "pp": 4},
            "profile": {"archetype": "pcie_a40"}}"#,
    );
    let o = run(&["estimate", "--plan-source", "strand_interleave", "--scenario", p.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["estimate", "--plan-source", "megatron_baseline", "--scenario", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sparse_profile_is_missing_entry() {
    let dir = tempfile::tempdir().unwrap();
    let prof = write(
        dir.path(),
        "p.json",
        r#"{"oef": [{"a": "GEMM", "b": "AllGather", "value": 0.8}]}"#,
    );
    let o = run(&[
        "search",
        "--scenario",
        scenario("llama25b_pcie.json").to_str().unwrap(),
        "--profile",
        prof.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_caps_are_config_error() {
    let s = scenario("llama25b_pcie.json");
    let o = run(&["search", "--scenario", s.to_str().unwrap(), "--caps", "seq=0"]);
    assert_eq!(code(&o), 2);
    let o = run(&["search", "--scenario", s.to_str().unwrap(), "--caps", "depth=3"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn search_writes_plan() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("llama25b_pcie.json");
    let o = run(&[
        "search",
        "--scenario",
        s.to_str().unwrap(),
        "--caps",
        "seq=4,segs=4,cands=256",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    let frac = plan["hidden_comm_frac"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&frac));
    assert!(!plan["steps"].as_array().unwrap().is_empty());
    assert_eq!(plan["metadata"]["context"]["caps"]["sequences"], 4);
}

#[test]
fn pipeline_geometry_mode() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pipeline", "--m", "12", "--p", "4", "--trace", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("schedule.json")).unwrap()).unwrap();
    assert_eq!(v["discipline"], "w_shape");
    assert_eq!(v["violations"].as_array().unwrap().len(), 0);
    assert_eq!(v["pp_transfers"], 144);
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert!(trace.is_object() || trace.is_array());
    let csv = std::fs::read_to_string(dir.path().join("blocks.csv")).unwrap();
    assert!(csv.lines().count() > 1);

    let o = run(&["pipeline", "--m", "12"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn profile_synth_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["profile", "synth", "--archetype", "nvlink_h100", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let path = dir.path().join("profile_nvlink_h100.json");
    let o = run(&["profile", "validate", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], true);

    // a value outside the tolerated OEF range is refused
    let bad = write(dir.path(), "bad.json", r#"{"oef": [{"a": "GEMM", "b": "AllGather", "value": 1.5}]}"#);
    let o = run(&["profile", "validate", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn memory_reports_every_discipline() {
    let o = run(&["memory", "--scenario", scenario("llama25b_pcie.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let d = v["disciplines"].as_array().unwrap();
    assert_eq!(d.len(), 3);
    let layers: Vec<u64> = d.iter().map(|x| x["max_model"]["layers"].as_u64().unwrap()).collect();
    // w_shape, one_f_one_b, bidirectional
    assert!(layers[2] < layers[0] && layers[0] <= layers[1], "{layers:?}");
}

/// Two runs with the same scenario and seed write identical bytes.
#[test]
fn compare_is_byte_identical() {
    let s = scenario("gpt18b_a800.json");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = run(&["compare", "--scenario", s.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["compare.json", "compare.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    // a seed override lands in the report
    let o = run(&["compare", "--scenario", s.to_str().unwrap(), "--seed", "99"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 99);
}
