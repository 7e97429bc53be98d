use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TWO_AGENTS: &str = r#"
schema = "distobs/scenario/v1"
lambda = 0.8
tau_max = 40

[q]
method = "mixed"

[plant]
n = 2
m = 2
a = [1.1, 0.0, 0.0, 0.9]
sensors = [{ rows = 1, c = [1.0, 0.0] }, { rows = 1, c = [0.0, 1.0] }]

[schedule]
m = 2
graphs = [[[1, 2], [2, 1]]]
signal = { mode = "periodic", sequence = [0] }
"#;

fn distobs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distobs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_record(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("an error record on stderr");
    serde_json::from_str(line).expect("error record is JSON")
}

fn run_in(dir: &Path, cmd: &str, config: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join(format!("out_{cmd}_{}", extra.len()));
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    (distobs(&args), out)
}

#[test]
fn synthesize_writes_design_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", TWO_AGENTS);
    let (o, out) = run_in(dir.path(), "synthesize", &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("q = 1"));
    assert!(stdout(&o).contains("lyapunov margin 0.375"));

    let design: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("design.json")).unwrap()).unwrap();
    assert_eq!(design["schema"], "distobs/design/v1");
    assert_eq!(design["agents"].as_array().unwrap().len(), 2);
    assert_eq!(
        design["selection"]["p"], 1,
        "m = 2 gives the p = 1 mixed branch"
    );

    let cert: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("certificate.json")).unwrap())
            .unwrap();
    assert_eq!(cert["passed"], true);
    assert!(cert["checks"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["label"] == "lyapunov_decrement"));
}

#[test]
fn plant_that_is_not_jointly_observable_fails() {
    let dir = tempfile::tempdir().unwrap();
    let text = TWO_AGENTS.replace("c = [0.0, 1.0]", "c = [1.0, 0.0]");
    let cfg = write_config(dir.path(), "s.toml", &text);
    let (o, _) = run_in(dir.path(), "synthesize", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    let rec = error_record(&o);
    assert_eq!(rec["error"]["label"], "joint_observability");
    assert!(rec["error"]["message"]
        .as_str()
        .unwrap()
        .contains("joint observability violated"));
}

#[test]
fn disconnected_schedule_is_rejected_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let text = TWO_AGENTS.replace("graphs = [[[1, 2], [2, 1]]]", "graphs = [[[1, 2]]]");
    let cfg = write_config(dir.path(), "s.toml", &text);
    let (o, _) = run_in(dir.path(), "simulate", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_record(&o)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("strongly connected"));
}

#[test]
fn missing_schema_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let text = TWO_AGENTS.replace("schema = \"distobs/scenario/v1\"\n", "");
    let cfg = write_config(dir.path(), "s.toml", &text);
    let (o, _) = run_in(dir.path(), "synthesize", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["error"]["kind"], "invalid_input");
}

#[test]
fn simulate_reports_rate_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", TWO_AGENTS);
    let (o, out) = run_in(dir.path(), "simulate", &cfg, &["--verbose"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("rate target met"));

    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["measured_rate"].as_f64().unwrap() <= 0.85);

    let csv = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("tau,graph_id,err_norm_total,err_norm_agent_1,err_norm_agent_2"));
    assert_eq!(lines.count(), 41);
    assert!(out.join("rounds.csv").exists());
}

#[test]
fn zero_horizon_gives_a_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        &TWO_AGENTS.replace("tau_max = 40", "tau_max = 0"),
    );
    let (o, out) = run_in(dir.path(), "simulate", &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn under_provisioned_q_is_flagged_but_exits_zero() {
    // Each agent is blind to a mode growing at 1.9; one round per event
    // halves the disagreement, which leaves a decay of 0.95. The state itself
    // grows too, so the horizon stays short of the overflow guard.
    let dir = tempfile::tempdir().unwrap();
    let text = TWO_AGENTS
        .replace("a = [1.1, 0.0, 0.0, 0.9]", "a = [1.9, 0.0, 0.0, 1.9]")
        .replace("method = \"mixed\"", "method = \"explicit\"\nvalue = 1");
    let cfg = write_config(dir.path(), "s.toml", &text);
    let (o, out) = run_in(dir.path(), "simulate", &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("rate target not met"));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rate_target_met"], false);

    // The same configuration does not certify.
    let (o, _) = run_in(dir.path(), "synthesize", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_record(&o)["error"]["label"], "explicit_q_bound");
}

#[test]
fn divergent_run_hits_the_overflow_guard() {
    let dir = tempfile::tempdir().unwrap();
    let text = TWO_AGENTS
        .replace("a = [1.1, 0.0, 0.0, 0.9]", "a = [3.0, 0.0, 0.0, 3.0]")
        .replace("method = \"mixed\"", "method = \"explicit\"\nvalue = 1")
        .replace("tau_max = 40", "tau_max = 400");
    let cfg = write_config(dir.path(), "s.toml", &text);
    let (o, _) = run_in(dir.path(), "simulate", &cfg, &[]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(error_record(&o)["error"]["label"], "overflow_guard");
}

#[test]
fn identical_seeds_give_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", TWO_AGENTS);
    let read = |out: &str| {
        let out = dir.path().join(out);
        let o = distobs(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "17",
            "--verbose",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        (
            std::fs::read(out.join("trace.csv")).unwrap(),
            std::fs::read(out.join("rounds.csv")).unwrap(),
        )
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn tampered_gains_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", TWO_AGENTS);
    let (o, out) = run_in(dir.path(), "synthesize", &cfg, &[]);
    assert!(o.status.success());

    let mut design: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("design.json")).unwrap()).unwrap();
    for v in design["agents"][0]["k_bar"]["data"].as_array_mut().unwrap() {
        *v = Value::from(0.0);
    }
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, serde_json::to_string(&design).unwrap()).unwrap();

    let o = distobs(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--gains",
        tampered.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(
        error_record(&o)["error"]["label"],
        "quotient_spectral_radius"
    );
    assert!(stdout(&o).contains("FAIL"));

    // The untouched design file verifies.
    let o = distobs(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--gains",
        out.join("design.json").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn default_random_suite_passes() {
    let o = distobs(&["verify", "--seed", "11", "--cases", "4"]);
    assert!(
        o.status.success(),
        "{}\n{}",
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("all checks passed"));
}

#[test]
fn gains_without_config_is_rejected() {
    let o = distobs(&["verify", "--gains", "whatever.json"]);
    assert_eq!(o.status.code(), Some(2));
}
