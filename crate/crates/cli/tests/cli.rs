use std::process::{Command, Output};

use qfb_core::protocol::noiseless_qubit_spec;
use serde_json::Value;

fn qfb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfb")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn erasure_bound() {
    let out = qfb(&["bound", "--named", "erasure", "--d", "2", "--p", "0.25"]);
    assert_eq!(out.status.code(), Some(0));
    assert!((json(&out)["value_bits"].as_f64().unwrap() - 0.75).abs() < 1e-4);
}

#[test]
fn identity_bound_with_rate() {
    let out = qfb(&["bound", "--named", "identity", "--d", "4", "--n", "3", "--epsilon", "0"]);
    let v = json(&out);
    assert!((v["value_bits"].as_f64().unwrap() - 2.0).abs() < 1e-4);
    assert!((v["rate_bound_bits"].as_f64().unwrap() - 6.0).abs() < 1e-4);
}

#[test]
fn bound_from_channel_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ch.json");
    std::fs::write(&path, r#"{"name": "dephasing", "p": 0.3}"#).unwrap();
    let out = qfb(&["bound", "--channel", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!((json(&out)["value_bits"].as_f64().unwrap() - 1.0).abs() < 1e-4);
}

#[test]
fn exit_codes() {
    assert_eq!(qfb(&["bound", "--named", "identity"]).status.code(), Some(2));
    assert_eq!(qfb(&["bound"]).status.code(), Some(2));
    assert_eq!(qfb(&["verify", "lemma9"]).status.code(), Some(2));
    let infeasible = qfb(&["bound", "--named", "pure_loss", "--eta", "0.5", "--cutoff", "3", "--ns", "-0.5"]);
    assert_eq!(infeasible.status.code(), Some(3));
    let capped = qfb(&["simulate", "--random", "--n", "3", "--seed", "1", "--dim-cap", "4"]);
    assert_eq!(capped.status.code(), Some(4));
}

#[test]
fn malformed_spec_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spec.json");
    std::fs::write(&path, "{\"n\": 1}").unwrap();
    assert_eq!(qfb(&["simulate", "--spec", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn tolerance_override_is_validated() {
    let run = |value: &str| {
        Command::new(env!("CARGO_BIN_EXE_qfb"))
            .args(["verify", "lemma1", "--trials", "2"])
            .env("QFB_TOL_OVERRIDE", value)
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(run(r#"{"ineq": 1e-6}"#), Some(0));
    assert_eq!(run(r#"{"ineq": 0}"#), Some(2));
    assert_eq!(run(r#"{"bogus": 1}"#), Some(2));
    assert_eq!(run("not json"), Some(2));
}

#[test]
fn verify_is_deterministic() {
    let a = qfb(&["verify", "lemma1", "--trials", "1", "--seed", "0"]);
    let b = qfb(&["verify", "lemma1", "--trials", "1", "--seed", "0"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn verify_single_channel_chain_passes() {
    let out = qfb(&["verify", "thm1", "--protocols", "20", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["results"][0]["trials"], 20);
}

#[test]
fn verify_csv_has_one_row_per_suite() {
    let out = qfb(&["verify", "all", "--trials", "5", "--protocols", "2", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("name,trials,violations"));
}

#[test]
fn trivial_spec_is_error_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spec.json");
    std::fs::write(&path, serde_json::to_string(&noiseless_qubit_spec()).unwrap()).unwrap();
    let out = qfb(&["simulate", "--spec", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["trace"]["error_probability"].as_f64().unwrap(), 0.0);
    assert_eq!(v["chain_passed"], true);
    assert!(String::from_utf8(out.stderr).unwrap().contains("chain: PASS"));
}

#[test]
fn random_simulation_has_requested_rounds() {
    let out = qfb(&["simulate", "--random", "--n", "2", "--seed", "11"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["trace"]["rounds"].as_array().unwrap().len(), 2);
    assert_eq!(v["chain_passed"], true);
}

#[test]
fn mixture_simulation_reports_conditional_entropies() {
    let out = qfb(&[
        "simulate", "--random", "--n", "2", "--seed", "5", "--named", "erasure", "--d", "2", "--p", "0.25", "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().ends_with("conditional_output_entropy"));
    assert!(lines.all(|l| !l.ends_with(',')));
}

#[test]
fn trace_json_reparses_exactly() {
    let out = qfb(&["simulate", "--random", "--n", "2", "--seed", "4", "--dump-states"]);
    let v = json(&out);
    let trace: qfb_core::protocol::ProtocolTrace = serde_json::from_value(v["trace"].clone()).unwrap();
    let again = qfb_cli::format::to_json(&trace).unwrap();
    let back: qfb_core::protocol::ProtocolTrace = serde_json::from_str(&again).unwrap();
    assert_eq!(back, trace);
    assert!(trace.rounds.iter().all(|r| r.states.is_some()));
}

#[test]
fn output_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = qfb(&["bound", "--named", "identity", "--d", "2", "--output", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!((v["value_bits"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}
