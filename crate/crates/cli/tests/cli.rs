use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ironkit"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).arg("--quiet").output().unwrap()
}

fn solve(name: &str) -> Value {
    let out = run(&[name]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn values(v: &Value) -> Vec<f64> {
    v["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ironkit-cli-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn two_by_two_ironing_golden() {
    let doc = solve("iron_2x2");
    assert_eq!(doc["version"], "ironkit-1");
    assert_eq!(doc["mode"], "iron");
    close(&values(&doc["outputs"]["alpha_bar"]), &[2.0, 2.0, 2.0, 6.0], 1e-9);
    let cells = doc["outputs"]["partition"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    assert_eq!(doc["diagnostics"]["verification"]["majorizes"], true);
}

#[test]
fn access_golden() {
    let doc = solve("access_3x3");
    let eta = values(&doc["outputs"]["eta"][0]);
    assert!((eta[3] - 1.0 / 3.0).abs() < 1e-9);
    assert!((eta[5] - 3.0 / 7.0).abs() < 1e-9);
    for e in eta {
        assert!((-1e-12..=1.0 + 1e-12).contains(&e));
    }
}

#[test]
fn contract_golden() {
    let doc = solve("contract_3x3");
    close(
        &values(&doc["outputs"]["marginal_cost"]),
        &[10.0, 13.0, 16.0, 13.0, 12.0, 11.0, 16.0, 11.0, 6.0],
        1e-9,
    );
}

#[test]
fn sosd_golden() {
    let doc = solve("sosd_spread");
    assert_eq!(doc["outputs"]["second_order"]["verdict"], true);
    assert_eq!(doc["outputs"]["first_order"]["verdict"], false);
}

#[test]
fn output_is_byte_deterministic() {
    for name in ["iron_2x2", "access_3x3", "contract_3x3", "sosd_spread"] {
        let a = run(&[name]).stdout;
        let b = run(&[name]).stdout;
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn grid_round_trips_through_output() {
    let doc = solve("contract_3x3");
    let grid = &doc["grid"];
    let input: Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("contract_3x3.json")).unwrap()).unwrap();
    for (axis, printed) in input["axes"].as_array().unwrap().iter().zip(grid["points"].as_array().unwrap()) {
        let want: Vec<f64> = axis["points"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        let got: Vec<f64> = printed.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(want, got);
    }
    // Feeding the printed grid back in must reproduce the same solution.
    let mut again = input.clone();
    again["axes"] = grid["points"]
        .as_array()
        .unwrap()
        .iter()
        .zip(grid["probs"].as_array().unwrap())
        .map(|(p, q)| serde_json::json!({ "points": p, "probs": q }))
        .collect();
    let path = scratch("roundtrip").join("again.json");
    std::fs::write(&path, serde_json::to_string(&again).unwrap()).unwrap();
    let redo = solve(path.to_str().unwrap());
    assert_eq!(redo["outputs"], doc["outputs"]);
}

#[test]
fn reads_stdin() {
    let text = std::fs::read_to_string(fixtures().join("iron_2x2.json")).unwrap();
    let mut child = bin()
        .args(["-", "--quiet"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(out.stdout, run(&["iron_2x2"]).stdout);
}

#[test]
fn fixture_dir_override() {
    let dir = scratch("fixtures");
    std::fs::copy(fixtures().join("iron_2x2.json"), dir.join("renamed.json")).unwrap();
    let out = bin().args(["renamed", "--quiet"]).env("IRONKIT_FIXTURES", &dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let missing = bin().args(["renamed", "--quiet"]).env_remove("IRONKIT_FIXTURES").output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["iron_2x2", "--phi", "cubic"]).status.code(), Some(1));
    assert_eq!(run(&["iron_2x2", "--bogus"]).status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn bad_input_exits_two_with_pointer() {
    let dir = scratch("bad");
    let cases = [
        ("garbage.json", "{not json".to_string()),
        ("version.json", r#"{"version":"ironkit-0","mode":"iron"}"#.to_string()),
        (
            "unknown.json",
            r#"{"version":"ironkit-1","mode":"iron","axes":[{"points":[0,1]}],"alpha":[1,2],"extra":1}"#
                .to_string(),
        ),
        (
            "shape.json",
            r#"{"version":"ironkit-1","mode":"iron","axes":[{"points":[0,1]},{"points":[0,1]}],"alpha":[[1,2],[3]]}"#
                .to_string(),
        ),
    ];
    for (name, body) in &cases {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        let out = run(&[path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        assert!(out.stdout.is_empty(), "{name}");
        assert!(!out.stderr.is_empty(), "{name}");
    }
    let out = run(&[dir.join("shape.json").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/alpha/1"));
}

#[test]
fn dyadic_csv_flattens_on_lower_triangle() {
    let csv_path = scratch("csv").join("dyadic.csv");
    let out = run(&["dyadic_quadratic", "--csv", csv_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["x0", "x1", "alpha", "alpha_bar"]);
    let mut lower = 0;
    for row in reader.records() {
        let row: Vec<f64> = row.unwrap().iter().map(|s| s.parse().unwrap()).collect();
        if row[0] + row[1] < 0.9 {
            lower += 1;
            assert!((row[3] - 0.5).abs() < 0.02, "{row:?}");
        }
    }
    assert!(lower > 100);
}

#[test]
fn batch_keeps_order_and_writes_indexed_csv() {
    let csv_path = scratch("batch").join("plot.csv");
    let out = run(&["batch", "--csv", csv_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let docs: Vec<Value> = serde_json::from_slice(&out.stdout).unwrap();
    let modes: Vec<&str> = docs.iter().map(|d| d["mode"].as_str().unwrap()).collect();
    assert_eq!(modes, ["iron", "access", "contract"]);
    assert_eq!(docs[0]["outputs"], solve("iron_2x2")["outputs"]);
    for k in 0..3 {
        assert!(ironkit_cli::batch_csv_path(&csv_path, k).exists());
    }
}

#[test]
fn batch_reports_failures_in_place() {
    let good: Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("iron_2x2.json")).unwrap()).unwrap();
    let bad = serde_json::json!({"version": "ironkit-1", "mode": "iron"});
    let text = serde_json::to_string(&vec![good, bad]).unwrap();
    let exec = ironkit_cli::execute(&text, &ironkit_cli::Overrides::default());
    assert!(exec.batch);
    assert_eq!(exec.exit_code(), 2);
    let docs: Vec<Value> = serde_json::from_str(&exec.stdout).unwrap();
    assert_eq!(docs.len(), 2);
    assert!(docs[0]["outputs"].is_object());
    assert!(docs[1].get("error").is_some());
}
