//! End-to-end tests of the davis-lab binary: artifact shapes, exit codes,
//! flag-over-file precedence, and the summary round trip.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_davis-lab"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Fresh per-test scratch directory.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("davis-lab-tests-{name}"));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).expect("write fixture");
}

fn parse(text: &str) -> Value {
    serde_json::from_str(text).expect("output is JSON")
}

fn parse_file(path: &Path) -> Value {
    parse(&fs::read_to_string(path).expect("artifact exists"))
}

/// Four-state market with both increment signs whose claim replicates as
/// 0.3 + 0.7 dS.
fn replicable_market() -> String {
    serde_json::json!({
        "probs": [0.25, 0.25, 0.25, 0.25],
        "dS": [1.0, 0.5, -0.5, -1.0],
        "endowment": [2.0, 2.0, 2.0, 2.0],
        "claim": [1.0, 0.65, -0.05, -0.4],
    })
    .to_string()
}

#[test]
fn solve_prints_a_summary_with_the_resolved_config() {
    let dir = scratch("solve-stdout");
    let market = dir.join("market.json");
    write(&market, &replicable_market());
    let (code, stdout, _) = run(&["solve", "--market", market.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v = parse(&stdout);
    assert_eq!(v["schema"], "davis-lab summary v1");
    assert_eq!(v["config"]["command"], "solve");
    assert_eq!(v["config"]["utility"], "log");
    assert_eq!(v["config"]["tol"], 1e-12);
    assert!(v["result"]["stationarity_residual"].as_f64().unwrap() < 1e-6);
    let wealth = v["result"]["wealth"].as_array().unwrap();
    assert_eq!(wealth.len(), 4);
    assert!(wealth.iter().all(|w| w.as_f64().unwrap() > 0.0));
}

#[test]
fn davis_prices_a_replicable_claim_as_a_point() {
    let dir = scratch("davis-replicable");
    let market = dir.join("market.json");
    write(&market, &replicable_market());
    let out = dir.join("run.json");
    let (code, _, _) =
        run(&["davis", "--market", market.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v = parse_file(&out);
    let sg = &v["result"]["supergradient"];
    assert!(sg["width"].as_f64().unwrap() < 1e-6);
    assert!((sg["midpoint"].as_f64().unwrap() - 0.3).abs() < 1e-4);
    assert!(v["result"]["midpoint_spread"].as_f64().unwrap() < 1e-4);
    let csv = fs::read_to_string(dir.join("run.csv")).expect("table beside the summary");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# davis-lab schema v1"));
    assert_eq!(lines.next(), Some("method,p_low,p_high,width,midpoint"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn dual_closes_the_gap_and_links_the_density() {
    let dir = scratch("dual");
    let market = dir.join("market.json");
    write(&market, &replicable_market());
    let (code, stdout, _) = run(&["dual", "--market", market.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v = parse(&stdout);
    assert!(v["result"]["gap"].as_f64().unwrap().abs() < 1e-9);
    assert!(v["result"]["marginal_link_residual"].as_f64().unwrap() < 1e-9);
    assert!(v["result"]["martingale_residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn superrep_certifies_the_three_state_counterexample() {
    let dir = scratch("superrep");
    let market = dir.join("market.json");
    write(
        &market,
        &serde_json::json!({
            "probs": [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            "dS": [1.0, 0.0, -1.0],
            "endowment": [1.0, 1.0, 1.0],
            "claim": [-1.0, 0.0, -1.0],
        })
        .to_string(),
    );
    let (code, stdout, _) = run(&["superrep", "--market", market.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v = parse(&stdout);
    assert_eq!(v["result"]["verdict"], "not_unique");
    assert!(v["result"]["least_element"].is_null());
    assert!(v["result"]["price"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn sweep_emits_the_versioned_csv_schema() {
    let dir = scratch("sweep-csv");
    let out = dir.join("sweep.json");
    let (code, _, _) = run(&["sweep", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(dir.join("sweep.csv")).expect("sweep table");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# davis-lab schema v1"));
    assert_eq!(lines.next(), Some("N,y_N,pairing_H,du_plus,du_minus,gap"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 6);
        fields[0].parse::<usize>().expect("level is an integer");
        assert!(fields[5].parse::<f64>().expect("gap is a float") > 0.0);
    }
    let v = parse_file(&out);
    assert_eq!(v["config"]["family"], "csw");
    assert_eq!(v["config"]["levels"], serde_json::json!([200, 500, 1000]));
}

#[test]
fn summaries_reingest_to_identical_results() {
    let dir = scratch("roundtrip");
    let market = dir.join("market.json");
    write(&market, &replicable_market());
    let first = dir.join("first.json");
    let (code, _, _) =
        run(&["davis", "--market", market.to_str().unwrap(), "--out", first.to_str().unwrap()]);
    assert_eq!(code, 0);
    let second = dir.join("second.json");
    let (code, _, _) =
        run(&["--config", first.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(code, 0);
    let a = parse_file(&first);
    let b = parse_file(&second);
    assert_eq!(a["result"], b["result"]);
    assert_eq!(b["config"]["command"], "davis");
}

#[test]
fn flags_override_the_configuration_file() {
    let dir = scratch("override");
    let market = dir.join("market.json");
    write(&market, &replicable_market());
    let cfg = dir.join("cfg.json");
    write(
        &cfg,
        &serde_json::json!({
            "command": "solve",
            "market": market.to_str().unwrap(),
            "utility": "power",
            "gamma": 0.5,
        })
        .to_string(),
    );
    // The utility flag wins and drops the file's now-stale gamma.
    let (code, stdout, _) = run(&["solve", "--config", cfg.to_str().unwrap(), "--utility", "log"]);
    assert_eq!(code, 0);
    let v = parse(&stdout);
    assert_eq!(v["config"]["utility"], "log");
    assert!(v["config"].get("gamma").is_none());
}

#[test]
fn unknown_config_fields_are_rejected_without_output() {
    let dir = scratch("deny-unknown");
    let cfg = dir.join("bad.json");
    write(&cfg, r#"{ "command": "sweep", "levels": [40], "frobnicate": 1 }"#);
    let out = dir.join("never").join("out.json");
    let (code, _, stderr) =
        run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 4);
    assert!(stderr.contains("frobnicate"));
    assert!(!out.exists());
}

#[test]
fn exit_codes_separate_config_and_model_errors() {
    let dir = scratch("exit-codes");
    let market = dir.join("market.json");
    write(&market, &replicable_market());
    let m = market.to_str().unwrap();

    let malformed = dir.join("malformed.json");
    write(&malformed, "{ probs: oops");
    assert_eq!(run(&["davis", "--market", malformed.to_str().unwrap()]).0, 4);

    let arbitrage = dir.join("arbitrage.json");
    write(
        &arbitrage,
        &serde_json::json!({ "probs": [0.5, 0.5], "dS": [1.0, 2.0], "endowment": [1.0, 1.0] })
            .to_string(),
    );
    let out = dir.join("partial.json");
    let (code, _, _) =
        run(&["solve", "--market", arbitrage.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(!out.exists(), "a failed run must not leave artifacts");

    assert_eq!(run(&["davis", "--market", m, "--utility", "power"]).0, 4);
    assert_eq!(run(&["solve", "--market", m, "--gamma", "0.5"]).0, 4);
    assert_eq!(run(&["mc", "--paths", "500"]).0, 4);
    assert_eq!(run(&["davis", "--market", m, "--family", "csw"]).0, 4);
    assert_eq!(run(&["sweep", "--paths", "20000"]).0, 4);
    assert_eq!(run(&["solve", "--market", m, "--seed", "1"]).0, 4);
    assert_eq!(run(&[]).0, 4);
}

#[test]
fn mc_reports_mass_loss_and_checkpoints() {
    let dir = scratch("mc");
    let out = dir.join("mc.json");
    let (code, _, _) =
        run(&["mc", "--paths", "10000", "--seed", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v = parse_file(&out);
    let stopped = v["result"]["stopped"]["e_yt"].as_f64().unwrap();
    assert!(stopped > 0.0 && stopped < 0.9, "stopped mean {stopped}");
    let control = v["result"]["control"]["stats"]["e_yt"].as_f64().unwrap();
    assert!((control - 1.0).abs() < 0.05, "control mean {control}");
    assert_eq!(v["result"]["checkpoints"].as_array().unwrap().len(), 4);
    assert!(v["result"]["tanh_interval"]["width"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(dir.join("mc.csv")).expect("checkpoint table");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# davis-lab schema v1"));
    assert_eq!(lines.next(), Some("t,mean,ci_halfwidth"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn corrector_ladder_accepts_a_custom_eps_list() {
    let (code, stdout, _) = run(&["corrector", "--paths", "10000", "--eps", "0.1,0.05"]);
    assert_eq!(code, 0);
    let v = parse(&stdout);
    assert_eq!(v["config"]["eps"], serde_json::json!([0.1, 0.05]));
    assert!(v["result"]["violation"].is_null());
    assert_eq!(v["result"]["r"].as_array().unwrap().len(), 2);
}

#[test]
fn reproduce_three_state_prints_pass_lines() {
    let dir = scratch("reproduce");
    let out = dir.join("record.json");
    let (code, stdout, _) = run(&["reproduce", "three-state", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines.len() >= 3);
    assert!(lines.iter().all(|l| l.ends_with(": PASS")), "lines: {lines:?}");
    let v = parse_file(&out);
    assert_eq!(v["reproduce"], "three-state");
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn reproduce_rejects_experiment_flags() {
    assert_eq!(run(&["reproduce", "csw", "--paths", "20000"]).0, 4);
    let (code, _, stderr) = run(&["reproduce", "csw", "--config", "whatever.json"]);
    assert_eq!(code, 4);
    assert!(stderr.contains("canned"));
}
