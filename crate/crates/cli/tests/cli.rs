use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

fn twinsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinsim"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("run twinsim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn export(dir: &TempDir, name: &str) -> String {
    let path = dir.path().join(format!("{name}.json"));
    let p = path.to_str().unwrap();
    let o = twinsim(&["fixtures", "export", name, "--out", p]);
    assert!(o.status.success());
    p.to_string()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const TINY: &str = r#"{
  "name": "tiny", "seed": 1, "description": "",
  "topology": {
    "nodes": [
      {"id": "e1", "tier": "edge", "cpu_m": 1000, "mem_mib": 1024, "storage_gib": 10, "power_idle_w": 10.0, "power_max_w": 30.0, "labels": {}},
      {"id": "c1", "tier": "cloud", "cpu_m": 8000, "mem_mib": 8192, "storage_gib": 100, "power_idle_w": 50.0, "power_max_w": 200.0, "labels": {}}
    ],
    "links": [{"a": "e1", "b": "c1", "latency_ms": 20, "bandwidth_mbps": 100.0, "up": true}]
  },
  "events": [
    {"t": 0, "kind": "job_arrival", "id": "j1", "cpu_m": 500, "mem_mib": 128, "storage_gib": 0, "duration_ms": 10000}
  ]
}"#;

#[test]
fn fixtures_are_listed_and_exported_verbatim() {
    let o = twinsim(&["fixtures", "list"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(|l| l.split('\t').next().unwrap().to_string()).collect();
    assert_eq!(names, ["intersection", "mri", "emergency"]);

    let o = twinsim(&["fixtures", "export", "mri"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), twinsim::scenario::fixture_text("mri").unwrap());

    let o = twinsim(&["fixtures", "export", "volcano"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_reports_issues_with_exit_one() {
    let dir = TempDir::new().unwrap();
    for name in ["intersection", "mri", "emergency"] {
        let o = twinsim(&["validate", &export(&dir, name)]);
        assert_eq!(o.status.code(), Some(0), "{name}");
        assert!(stdout(&o).starts_with(&format!("ok: {name}")));
    }

    let dup = TINY.replace(r#""id": "c1""#, r#""id": "e1""#);
    let o = twinsim(&["validate", &write(&dir, "dup.json", &dup)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("duplicate-node-id"), "{}", stdout(&o));

    let o = twinsim(&["validate", &write(&dir, "broken.json", "{\"name\": ")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("syntax"));

    let o = twinsim(&["validate", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_prints_kpis_and_writes_the_log() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "tiny.json", TINY);
    let log = dir.path().join("run.ndjson");
    let report = dir.path().join("report.json");
    let o = twinsim(&[
        "simulate",
        &scenario,
        "--scheduler",
        "first-fit",
        "--log",
        log.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kpis: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(kpis["jobs_completed"], 1);
    assert_eq!(kpis["mean_response_ms"], 10000.0);
    assert_eq!(std::fs::read_to_string(&report).unwrap(), stdout(&o));
    let lines = std::fs::read_to_string(&log).unwrap();
    assert!(lines.lines().any(|l| l.contains(r#""action":"place""#) && l.contains(r#""node":"c1""#)));

    let invalid = write(&dir, "bad.json", &TINY.replace("\"duration_ms\": 10000", "\"duration_ms\": 10000, \"data_source\": \"nowhere\""));
    assert_eq!(twinsim(&["simulate", &invalid]).status.code(), Some(1));
    assert_eq!(twinsim(&["simulate", &scenario, "--scheduler", "no-such"]).status.code(), Some(2));
    let cfg = write(&dir, "engine.json", r#"{"reschedule_interval": 0}"#);
    assert_eq!(twinsim(&["simulate", &scenario, "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn simulate_with_an_agent_command() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "tiny.json", TINY);
    // Handshakes, then delays every job: nothing ever runs.
    let agent = r#"agent:read l; echo '{"type":"hello","protocol":1}'; while read l; do echo '{"type":"decisions","decisions":[]}'; done"#;
    let o = twinsim(&["simulate", &scenario, "--scheduler", agent]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kpis: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(kpis["jobs_completed"], 0);
}

#[test]
fn train_writes_a_result_usable_as_a_scheduler() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "tiny.json", TINY);
    let out = dir.path().join("result.json");
    let o = twinsim(&[
        "train",
        "--scenarios",
        &scenario,
        "--generations",
        "2",
        "--seed",
        "7",
        "--population",
        "4",
        "--elites",
        "2",
        "--serial",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["evaluations"], 4 + 2 * 2);
    assert_eq!(doc["config"]["batch_names"], serde_json::json!(["tiny"]));

    let o = twinsim(&["simulate", &scenario, "--scheduler", out.to_str().unwrap()]);
    assert!(o.status.success());

    // Bad hyper-parameters are a runtime error, not a validation failure.
    let o = twinsim(&["train", "--scenarios", &scenario, "--generations", "1", "--seed", "1", "--elites", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(twinsim(&["train", "--generations", "1", "--seed", "1", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn forecast_from_scenario_and_snapshot() {
    let dir = TempDir::new().unwrap();
    let scenario = write(&dir, "tiny.json", TINY);
    let events = write(
        &dir,
        "what-if.ndjson",
        "{\"t\":1000,\"kind\":\"job_arrival\",\"id\":\"extra\",\"cpu_m\":500,\"mem_mib\":128,\"storage_gib\":0,\"duration_ms\":2000}\n",
    );
    let o = twinsim(&["forecast", &scenario, "--events", &events, "--horizon", "5000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kpis: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(kpis["jobs_arrived"], 2);
    assert_eq!(kpis["jobs_completed"], 1);
    assert_eq!(kpis["window_ms"], 5000);

    let scenario_doc = twinsim::scenario::parse_scenario(TINY).unwrap();
    let snapshot = serde_json::to_string(&scenario_doc.twin().unwrap()).unwrap();
    let snap = write(&dir, "snap.json", &snapshot);
    let o = twinsim(&["forecast", &snap, "--events", &events, "--horizon", "5000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kpis: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(kpis["jobs_arrived"], 1);

    // A hypothetical event beyond the horizon is rejected.
    let o = twinsim(&["forecast", &snap, "--events", &events, "--horizon", "500"]);
    assert_eq!(o.status.code(), Some(2));
}

fn serve(dir: &TempDir, topology: &str, log: &Path, extra: &[&str], input: &str) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_twinsim"));
    cmd.args(["serve", "--topology", topology, "--listen", "127.0.0.1:0", "--log", log.to_str().unwrap()])
        .args(extra)
        .current_dir(dir.path())
        .env("RUST_LOG", "error")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd.spawn().unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn serve_consumes_stdin_and_resumes_from_its_log() {
    let dir = TempDir::new().unwrap();
    let topology = write(&dir, "tiny.json", TINY);
    let log = dir.path().join("twin.log");
    let feed = concat!(
        "{\"t\":0,\"kind\":\"job_arrival\",\"id\":\"a\",\"cpu_m\":500,\"mem_mib\":10,\"storage_gib\":0,\"duration_ms\":1000}\n",
        "not json\n",
        "{\"kind\":\"heartbeat\",\"t\":3000}\n",
    );
    let o = serve(&dir, &topology, &log, &[], feed);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["decision"]["job"], "a");
    assert_eq!(records[0]["outcome"], "applied");
    assert!(String::from_utf8_lossy(&o.stderr).contains("applied 2 rejected 1"));

    let sink = dir.path().join("records.ndjson");
    let o = serve(
        &dir,
        &topology,
        &log,
        &["--resume", "--sink", sink.to_str().unwrap()],
        "{\"kind\":\"heartbeat\",\"t\":2000}\n{\"kind\":\"heartbeat\",\"t\":9000}\n",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // The resumed clock is 3000, so the first heartbeat is out of order.
    assert!(String::from_utf8_lossy(&o.stderr).contains("applied 1 rejected 1"));
    let persisted = twinsim::manager::load_log(&log).unwrap();
    assert!(!persisted.torn_tail);
    let state = twinsim::TwinState::replay(persisted.topology, &persisted.entries).unwrap();
    assert_eq!(state.clock(), 9000);
    assert_eq!(state.job("a").unwrap().phase, twinsim::twin::Phase::Completed);

    let o = serve(&dir, &topology, &dir.path().join("absent.log"), &["--resume"], "");
    assert_eq!(o.status.code(), Some(2));
}
