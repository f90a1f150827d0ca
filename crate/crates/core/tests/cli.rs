use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn secagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secagg")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn keygen_example1_prints_r_star() {
    let o = secagg(&["keygen", "--U", "3", "--V", "2", "--T", "0", "--q", "11", "--seed", "7"]);
    assert_eq!(code(&o), 0);
    let table: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(table["r_star"], 3);
    assert_eq!(table["rows"].as_array().unwrap().len(), 6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("r_star = 3, attempts ="));
}

#[test]
fn keygen_example2_is_the_fixed_table() {
    let o = secagg(&["keygen", "--example", "2"]);
    assert_eq!(code(&o), 0);
    let t: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(t["rows"][0], serde_json::json!([1, 0, 0, 0, 0, 0]));
    assert_eq!(t["rows"][8], serde_json::json!([14, 11, 9, 7, 5, 3]));
}

#[test]
fn keygen_tiny_field_fails_with_hint() {
    let o = secagg(&["keygen", "--U", "3", "--V", "3", "--T", "2", "--q", "2", "--seed", "1"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("F_2") && err.contains("try q = 509"), "{err}");
}

#[test]
fn example_parameter_mismatch_is_a_config_error() {
    assert_eq!(code(&secagg(&["verify", "--example", "2", "--T", "1"])), 1);
    assert_eq!(code(&secagg(&["verify", "--example", "1", "--table", "x.json"])), 1);
    assert_eq!(code(&secagg(&["verify", "--U", "2", "--V", "2", "--T", "0"])), 1);
}

#[test]
fn verify_example1_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = secagg(&["verify", "--example", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let r = read_json(&out);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["config"]["resolved"]["q"], 11);
    assert_eq!(r["rates"]["achieved"], serde_json::json!({"R_X": 1, "R_Y": 1, "R_Z": 1, "R_ZSigma": 3}));
    assert_eq!(r["rates"]["optimal"], true);
    assert_eq!(r["exit_code"], 0);
}

#[test]
fn verify_mutated_table_exits_2_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.json");
    let out = dir.path().join("r.json");
    let keygen = secagg(&["keygen", "--example", "1", "--out", table.to_str().unwrap()]);
    assert_eq!(code(&keygen), 0);
    // Duplicate h(1,1) into h(1,2) and restore the zero sum on h(3,2).
    let mut t = read_json(&table);
    t["rows"][1] = serde_json::json!([1, 0, 0]);
    t["rows"][5] = serde_json::json!([7, 6, 3]);
    std::fs::write(&table, serde_json::to_string_pretty(&t).unwrap()).unwrap();
    let o = secagg(&["verify", "--table", table.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let r = read_json(&out);
    assert_eq!(r["table_validation"]["kind"], "dependent");
    assert_eq!(r["table_validation"]["witness"], serde_json::json!([{"key": [1, 1]}, {"key": [1, 2]}]));
    assert!(!r["security"]["failing_cases"].as_array().unwrap().is_empty());
}

#[test]
fn verify_sampled_policy_reports_partial_coverage() {
    let o = secagg(&["verify", "--U", "3", "--V", "2", "--T", "1", "--policy", "sample:3", "--seed", "2"]);
    assert_eq!(code(&o), 4);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["security"]["complete"], false);
    assert!(String::from_utf8_lossy(&o.stderr).contains("partial coverage"));
}

#[test]
fn simulate_repetition_and_zero_inputs() {
    let o = secagg(&["simulate", "--example", "1", "--l", "8", "--seed", "1"]);
    assert_eq!(code(&o), 0);
    let tr: Value = serde_json::from_slice(&o.stdout).unwrap();
    let decoded = tr["decoded"].as_array().unwrap();
    assert_eq!(decoded.len(), 3);
    assert!(decoded.iter().all(|d| d == &decoded[0] && d.as_array().unwrap().len() == 8));
    assert_eq!(tr["x"][0][0].as_array().unwrap().len(), 8);

    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("w.json");
    std::fs::write(&inputs, "[[[0,0],[0,0]],[[0,0],[0,0]],[[0,0],[0,0]]]").unwrap();
    let o = secagg(&["simulate", "--example", "1", "--inputs", inputs.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let tr: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(tr["decoded"], serde_json::json!([[0, 0], [0, 0], [0, 0]]));

    std::fs::write(&inputs, "[[[0]],[[0]],[[0]]]").unwrap();
    assert_eq!(code(&secagg(&["simulate", "--example", "1", "--inputs", inputs.to_str().unwrap()])), 1);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"U": 3, "V": 2, "T": 0, "q": 11, "seed": 1}"#).unwrap();
    let a = secagg(&["keygen", "--config", cfg.to_str().unwrap()]);
    let b = secagg(&["keygen", "--config", cfg.to_str().unwrap(), "--seed", "1"]);
    let c = secagg(&["keygen", "--config", cfg.to_str().unwrap(), "--seed", "2"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let t: Value = serde_json::from_slice(&c.stdout).unwrap();
    assert_eq!(t["q"], 11);

    std::fs::write(&cfg, r#"{"U": 3, "colour": 1}"#).unwrap();
    assert_eq!(code(&secagg(&["keygen", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn oracle_subcommand() {
    let o = secagg(&["oracle", "--U", "3", "--V", "2", "--T", "0", "--q", "3", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["rank_agrees"], true);
    assert_eq!(r["secure_by_enumeration"], true);

    let o = secagg(&["oracle", "--example", "1"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
}

#[test]
fn same_seed_same_bytes() {
    let a = secagg(&["simulate", "--example", "2", "--seed", "11", "--l", "3"]);
    let b = secagg(&["simulate", "--example", "2", "--seed", "11", "--l", "3"]);
    assert_eq!(a.stdout, b.stdout);
    let c = secagg(&["verify", "--U", "3", "--V", "3", "--T", "1", "--seed", "5"]);
    let d = secagg(&["verify", "--U", "3", "--V", "3", "--T", "1", "--seed", "5"]);
    assert_eq!(code(&c), 0);
    assert_eq!(c.stdout, d.stdout);
}
