//! End-to-end tests of the command-line interface: output schemas, golden
//! noiseless artifacts, determinism, and exit codes.

use std::process::{Command, Output};

fn sixstate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sixstate"))
        .args(args)
        .env_remove("SIXSTATE_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("utf8 stdout")
}

fn value_of(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|line| line.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("missing key {key} in:\n{text}"))
        .to_string()
}

#[test]
fn threshold_reports_closed_forms() {
    let output = sixstate(&["threshold", "--steane"]);
    assert!(output.status.success());
    let text = stdout(&output);
    let bit: f64 = value_of(&text, "bit_error_threshold").parse().unwrap();
    let channel: f64 = value_of(&text, "channel_error_threshold").parse().unwrap();
    let steane: f64 = value_of(&text, "steane_threshold").parse().unwrap();
    assert!((bit - 0.276393202).abs() < 1e-6);
    assert!((channel - 0.414589803).abs() < 1e-6);
    assert!((steane - 0.0580).abs() < 5e-4);
}

#[test]
fn threshold_numeric_agrees_with_closed_form() {
    let output = sixstate(&["threshold", "--numeric", "--tol", "1e-4"]);
    assert!(output.status.success());
    let text = stdout(&output);
    let bit: f64 = value_of(&text, "bit_error_threshold").parse().unwrap();
    let numeric: f64 = value_of(&text, "numeric_bisection").parse().unwrap();
    assert!((bit - numeric).abs() < 1e-4);
}

#[test]
fn threshold_json_is_valid() {
    let output = sixstate(&["threshold", "--steane", "--json"]);
    assert!(output.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&output)).unwrap();
    assert!(parsed["bit_error_threshold"].as_f64().unwrap() > 0.27);
    assert!(parsed["steane_threshold"].as_f64().unwrap() > 0.05);
}

#[test]
fn evolve_noiseless_golden() {
    let output = sixstate(&["evolve", "--rates", "1,0,0,0", "--k", "3"]);
    assert!(output.status.success());
    let text = stdout(&output);
    let table: Vec<&str> = text.lines().skip(2).collect();
    let expected = "\
round,p_i,p_x,p_y,p_z,survival
0,1.000000000000,0.000000000000,0.000000000000,0.000000000000,1.000000000000
1,1.000000000000,0.000000000000,0.000000000000,0.000000000000,1.000000000000
2,1.000000000000,0.000000000000,0.000000000000,0.000000000000,1.000000000000
3,1.000000000000,0.000000000000,0.000000000000,0.000000000000,1.000000000000";
    assert_eq!(table.join("\n"), expected);
}

#[test]
fn evolve_matches_map_worked_example() {
    let output = sixstate(&["evolve", "--rates", "0.7,0.1,0.1,0.1", "--k", "1", "--pec-r", "3"]);
    assert!(output.status.success());
    let text = stdout(&output);
    let row1 = text
        .lines()
        .find(|l| l.starts_with("1,"))
        .expect("round 1 row");
    let fields: Vec<f64> = row1.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((fields[0] - 0.7352941176).abs() < 1e-9);
    assert!((fields[1] - 0.0294117647).abs() < 1e-9);
    assert!((fields[3] - 0.2058823529).abs() < 1e-9);
    assert!((fields[4] - 0.68).abs() < 1e-12);
    // PEC block at the evolved rates is appended.
    assert!(text.contains("pec_r=3"));
    let bit_exact: f64 = value_of(&text, "pec_bit_error_exact").parse().unwrap();
    assert!(bit_exact > 0.0 && bit_exact < 0.5);
}

#[test]
fn evolve_rejects_unnormalized_rates() {
    let output = sixstate(&["evolve", "--rates", "0.7,0.2,0.2,0.1", "--k", "1"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn plan_feasibility_matches_threshold() {
    let output = sixstate(&["plan", "--bit-error", "0.25"]);
    assert!(output.status.success());
    assert_eq!(value_of(&stdout(&output), "feasible"), "true");

    let output = sixstate(&["plan", "--bit-error", "0.28"]);
    assert!(output.status.success(), "infeasible plans still exit 0");
    assert_eq!(value_of(&stdout(&output), "feasible"), "false");
}

#[test]
fn plan_json_round_trips() {
    let output = sixstate(&["plan", "--bit-error", "0.10", "--json"]);
    assert!(output.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&output)).unwrap();
    assert_eq!(parsed["plan"]["feasible"], serde_json::Value::Bool(true));
    assert!(parsed["plan"]["r"].as_u64().unwrap() >= 3);
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let args = [
        "simulate",
        "--bit-error",
        "0.06",
        "--n-sent",
        "150000",
        "--test-bits",
        "2000",
        "--seed",
        "7",
    ];
    let first = sixstate(&args);
    let second = sixstate(&args);
    assert!(first.status.success());
    assert_eq!(stdout(&first), stdout(&second));

    let mut other_seed = args;
    other_seed[8] = "8";
    let third = sixstate(&other_seed);
    assert_ne!(stdout(&first), stdout(&third));

    let text = stdout(&first);
    assert_eq!(value_of(&text, "trial_0_aborted"), "none");
    let key: u64 = value_of(&text, "trial_0_final_key_length").parse().unwrap();
    assert!(key > 0);
}

#[test]
fn simulate_seed_from_environment() {
    let args = ["simulate", "--bit-error", "0.06", "--n-sent", "90000", "--test-bits", "1000"];
    let from_env = Command::new(env!("CARGO_BIN_EXE_sixstate"))
        .args(args)
        .env("SIXSTATE_SEED", "99")
        .output()
        .unwrap();
    let from_flag = sixstate(&[
        "simulate",
        "--bit-error",
        "0.06",
        "--n-sent",
        "90000",
        "--test-bits",
        "1000",
        "--seed",
        "99",
    ]);
    assert_eq!(stdout(&from_env), stdout(&from_flag));
}

#[test]
fn sweep_feasibility_flips_once_near_threshold() {
    let output = sixstate(&[
        "sweep",
        "--from",
        "0.05",
        "--to",
        "0.30",
        "--step",
        "0.01",
        "--n-sifted",
        "1000000",
    ]);
    assert!(output.status.success());
    let text = stdout(&output);
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(
        lines.next().unwrap(),
        "bit_error,feasible,k,r,L,yield,mc_key_rate,mc_mismatch_rate"
    );
    let feasible: Vec<(f64, bool)> = lines
        .map(|line| {
            let mut fields = line.split(',');
            let b: f64 = fields.next().unwrap().parse().unwrap();
            let f: bool = fields.next().unwrap().parse().unwrap();
            (b, f)
        })
        .collect();
    let flips: Vec<usize> = feasible
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].1 != w[1].1)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(flips.len(), 1, "feasibility must flip exactly once: {feasible:?}");
    let (below, above) = (feasible[flips[0]], feasible[flips[0] + 1]);
    assert!(below.0 >= 0.27 - 1e-9 && below.1);
    assert!(above.0 <= 0.28 + 1e-9 && !above.1);
}

#[test]
fn sweep_with_trials_populates_mc_columns() {
    let output = sixstate(&[
        "sweep",
        "--from",
        "0.05",
        "--to",
        "0.07",
        "--step",
        "0.02",
        "--n-sifted",
        "1000000",
        "--trials",
        "2",
        "--n-sent",
        "120000",
        "--test-bits",
        "1500",
        "--seed",
        "3",
    ]);
    assert!(output.status.success());
    let text = stdout(&output);
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("bit_error")) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8);
        let key_rate: f64 = fields[6].parse().unwrap();
        assert!(key_rate > 0.0, "mc_key_rate empty in {line}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let output = sixstate(&["threshold", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(2));
    let output = sixstate(&["plan"]);
    assert_eq!(output.status.code(), Some(2), "missing channel argument is a usage error");
}
