use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TOY: &str = r#"
seed = 7
[problem]
kind = "toy"
[engine]
samples = 3
grid_size = 300
fast_grid_size = 100
[budget]
iterations = 3
repetitions = 2
"#;

fn pesc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pesc")).args(args).output().expect("binary runs")
}

fn ok_json(out: Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn setup(config: &str) -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    let state = dir.path().join("state.json");
    (dir, cfg, state)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn init(cfg: &Path, state: &Path) {
    ok_json(pesc(&["init", "--config", s(cfg), "--state", s(state)]));
}

fn suggest(state: &Path) -> Value {
    ok_json(pesc(&["suggest", "--state", s(state)]))
}

fn observe_toy(state: &Path, x: &[f64]) -> Output {
    let (a, b) = (x[0], x[1]);
    let f = a + b;
    let c1 = 1.5 - a - 2.0 * b - 0.5 * (2.0 * std::f64::consts::PI * (b - 2.0 * a)).sin();
    let c2 = a * a + b * b - 1.5;
    let xs = format!("{a},{b}");
    let values = format!("[{f},{c1},{c2}]");
    pesc(&["observe", "--state", s(state), "--task", "all", "--x", &xs, "--values", &values])
}

fn xs(v: &Value) -> Vec<f64> {
    v["x"].as_array().unwrap().iter().map(|c| c.as_f64().unwrap()).collect()
}

fn seed_observations(state: &Path) {
    for x in [[0.2, 0.7], [0.8, 0.3], [0.5, 0.5]] {
        assert!(observe_toy(state, &x).status.success());
    }
}

#[test]
fn suggest_observe_suggest_moves_on() {
    let (_dir, cfg, state) = setup(TOY);
    init(&cfg, &state);
    seed_observations(&state);
    let first = suggest(&state);
    assert_eq!(first["task"], "all");
    let x = xs(&first);
    assert!(x.iter().all(|c| (0.0..=1.0).contains(c)));
    assert!(observe_toy(&state, &x).status.success());
    let second = suggest(&state);
    assert_ne!(xs(&second), x);
}

#[test]
fn pending_evaluation_is_cleared_by_observe() {
    let (_dir, cfg, state) = setup(TOY);
    init(&cfg, &state);
    seed_observations(&state);
    let x = xs(&suggest(&state));
    let out = ok_json(observe_toy(&state, &x));
    assert_eq!(out["pending"], 0);
    assert_eq!(out["observations"], serde_json::json!([4, 4, 4]));
}

#[test]
fn wrong_arity_exits_with_two() {
    let (_dir, cfg, state) = setup(TOY);
    init(&cfg, &state);
    let out = pesc(&["observe", "--state", s(&state), "--task", "all", "--x", "0.1,0.2", "--values", "[1.0, 2.0]"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pesc(&["observe", "--state", s(&state), "--task", "all", "--x", "0.1", "--values", "[1, 2, 3]"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pesc(&["observe", "--state", s(&state), "--task", "nope", "--x", "0.1,0.2", "--values", "[1, 2, 3]"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_state_is_diagnosed() {
    let (_dir, cfg, state) = setup(TOY);
    init(&cfg, &state);
    let text = std::fs::read_to_string(&state).unwrap();
    std::fs::write(&state, &text[..text.len() / 2]).unwrap();
    let out = pesc(&["suggest", "--state", s(&state)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not valid JSON"));

    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["version"] = 99.into();
    std::fs::write(&state, v.to_string()).unwrap();
    let err = String::from_utf8_lossy(&pesc(&["suggest", "--state", s(&state)]).stderr).to_string();
    assert!(err.contains("version") && err.contains("99"), "{err}");

    v["version"] = 1.into();
    v["engine"] = Value::Null;
    std::fs::write(&state, v.to_string()).unwrap();
    let err = String::from_utf8_lossy(&pesc(&["suggest", "--state", s(&state)]).stderr).to_string();
    assert!(err.contains("version 1 state is corrupt"), "{err}");
}

#[test]
fn persisted_state_reproduces_suggestions() {
    let (dir, cfg, state) = setup(TOY);
    init(&cfg, &state);
    seed_observations(&state);
    let copy = dir.path().join("copy.json");
    std::fs::copy(&state, &copy).unwrap();
    let run = |st: &Path| -> Vec<Vec<f64>> {
        (0..3)
            .map(|_| {
                let x = xs(&suggest(st));
                assert!(observe_toy(st, &x).status.success());
                x
            })
            .collect()
    };
    assert_eq!(run(&state), run(&copy));
}

fn strip_timing(trace: &str) -> Vec<Value> {
    trace
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("timing");
            v
        })
        .collect()
}

#[test]
fn run_is_reproducible_and_schema_valid() {
    let (dir, cfg, _) = setup(TOY);
    let traces: Vec<String> = ["a", "b"]
        .iter()
        .map(|o| {
            let out = dir.path().join(o);
            ok_json(pesc(&["run", "--config", s(&cfg), "--output", s(&out)]));
            assert!(out.join("summary.csv").exists());
            std::fs::read_to_string(out.join("trace.jsonl")).unwrap()
        })
        .collect();
    assert_eq!(strip_timing(&traces[0]), strip_timing(&traces[1]));
    assert_eq!(traces[0].lines().count(), 6);

    let schema: Value = serde_json::from_str(pesc_cli::record::RUN_RECORD_SCHEMA).unwrap();
    let validator = jsonschema::JSONSchema::compile(&schema).unwrap();
    for line in traces[0].lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(validator.is_valid(&v), "{line}");
    }

    let csv = ok_plot(&dir.path().join("a/trace.jsonl"));
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("repetition,iteration,elapsed_seconds"));
}

fn ok_plot(trace: &Path) -> String {
    let out = pesc(&["plotdata", "--trace", s(trace)]);
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn external_black_box_run() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("bb.sh");
    std::fs::write(&script, "#!/bin/sh\ncat > /dev/null\necho '{\"values\": {\"f\": 0.5, \"c1\": 1.0}}'\n").unwrap();
    let config = format!(
        r#"
[problem]
kind = "external"
functions = ["f", "c1"]
bounds = [[-2.0, 2.0]]
[[tasks]]
id = "all"
functions = ["f", "c1"]
command = "sh {}"
[engine]
samples = 2
hyper = "map"
grid_size = 100
fast_grid_size = 50
[budget]
iterations = 2
initial = 2
"#,
        script.display()
    );
    let cfg = dir.path().join("ext.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = ok_json(pesc(&["run", "--config", s(&cfg), "--output", s(&dir.path().join("out"))]));
    assert_eq!(out["summary"]["evaluations"], 2);
    let trace = std::fs::read_to_string(dir.path().join("out/trace.jsonl")).unwrap();
    for line in trace.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let x = v["x"][0].as_f64().unwrap();
        assert!((-2.0..=2.0).contains(&x));
        assert_eq!(v["values"]["c1"], 1.0, "{line}");
    }
}

#[test]
fn oracle_reports_agreement() {
    let (_dir, cfg, _) = setup(
        r#"
[problem]
kind = "synthetic"
dim = 1
[engine]
samples = 5
rs_samples = 2000
[budget]
initial = 4
"#,
    );
    let v = ok_json(pesc(&["oracle", "--config", s(&cfg)]));
    assert_eq!(v["grid_points"], 100);
    let r = v["pearson"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&r));
}
