use std::path::Path;
use std::process::{Command, Output};

use ontwin::scenario::{Expectation, ScenarioScript};

fn bin(name: &str) -> Command {
    let exe = match name {
        "twin" => env!("CARGO_BIN_EXE_twin"),
        "agent" => env!("CARGO_BIN_EXE_agent"),
        _ => env!("CARGO_BIN_EXE_report"),
    };
    let mut c = Command::new(exe);
    c.env_remove("TWIN_LLM_ENDPOINT");
    c
}

fn run(name: &str, args: &[&str]) -> Output {
    bin(name).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn build_then_predict_eight_channels() {
    let dir = tempfile::tempdir().unwrap();
    let twin = dir.path().join("twin.json");
    let o = run("twin", &["build", "--preset", "system2", "--out", p(&twin)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run("twin", &["predict", "--twin", p(&twin), "--lightpath", "A,C,E", "--channels", "1-8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let chans = v["channels"].as_array().unwrap();
    assert_eq!(chans.len(), 8);
    assert_eq!(chans[0]["channel"], 1);
    assert!(v["min_gsnr_db"].as_f64().unwrap() > 10.0);

    let o = run("twin", &["predict", "--twin", p(&twin), "--lightpath", "A,Q", "--channels", "1"]);
    assert_eq!(code(&o), 4);
    let o = run("twin", &["predict", "--twin", p(&twin), "--lightpath", "A,C", "--channels", "9-2"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn usage_errors_and_missing_files_are_config_errors() {
    assert_eq!(code(&run("twin", &["frobnicate"])), 4);
    assert_eq!(code(&run("twin", &["build", "--out", "x.json"])), 4);
    assert_eq!(code(&run("report", &["--dir", "/nonexistent/run"])), 4);
    assert_eq!(code(&run("agent", &["run", "--scenario", "s7", "--out", "/tmp/never"])), 4);
    assert_eq!(code(&run("twin", &["--help"])), 0);
}

#[test]
fn calibrate_from_sampled_telemetry() {
    let dir = tempfile::tempdir().unwrap();
    let twin = dir.path().join("twin.json");
    let tele = dir.path().join("tele.ndjson");
    let out = dir.path().join("cal.json");
    assert_eq!(code(&run("twin", &["build", "--scenario", "s2", "--out", p(&twin)])), 0);
    assert_eq!(code(&run("twin", &["telemetry", "--scenario", "s2", "--polls", "2", "--out", p(&tele)])), 0);
    let o = run("twin", &["calibrate", "--twin", p(&twin), "--telemetry", p(&tele), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mode"], "ocm");
    assert!(v["residual_mse_db2"].as_f64().unwrap() < v["initial_mse_db2"].as_f64().unwrap());
    let cal: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(cal["calibration"].is_object());
}

#[test]
fn agent_exit_codes_follow_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);

    let o = run("agent", &["run", "--scenario", "s2", "--llm", "scripted", "--seed", "7", "--out", p(&d("s2"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    for f in ["run.json", "transcript.ndjson", "report.json", "gsnr.csv", "checks.csv"] {
        assert!(d("s2").join(f).exists(), "{f}");
    }
    let o = run("report", &["--dir", p(&d("s2")), "--format", "csv"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        String::from_utf8(o.stdout).unwrap(),
        std::fs::read_to_string(d("s2").join("checks.csv")).unwrap()
    );
    let o = run("report", &["--dir", p(&d("s2")), "--format", "json"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), std::fs::read_to_string(d("s2").join("report.json")).unwrap());

    assert_eq!(code(&run("agent", &["run", "--scenario", "s2-mutated", "--out", p(&d("m"))])), 0);
    assert_eq!(code(&run("agent", &["run", "--scenario", "s2", "--policy", "always-malformed", "--out", p(&d("bad"))])), 3);
    assert_eq!(code(&run("agent", &["run", "--scenario", "s2", "--llm", "http", "--out", p(&d("h"))])), 4);

    // A script that expects an escalation but gets a clean deployment fails its checks.
    let mut s = ScenarioScript::s2();
    s.expect = Expectation::Escalate;
    let file = d("custom.json");
    std::fs::write(&file, serde_json::to_string(&s).unwrap()).unwrap();
    let o = run("agent", &["run", "--scenario", p(&file), "--out", p(&d("c"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(code(&run("report", &["--dir", p(&d("c"))])), 2);
}
