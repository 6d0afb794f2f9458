use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn steamkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steamkit")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["gen", "--tasks", "3", "--robots", "3", "--width", "6", "--height", "6", "--out", p(&out)];
    args.extend_from_slice(extra);
    let o = steamkit(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn header(path: &Path) -> Vec<String> {
    csv::Reader::from_path(path).unwrap().headers().unwrap().iter().map(str::to_string).collect()
}

fn error_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let a = fs::read(generate(dir.path(), "a.json", &["--seed", "5"])).unwrap();
    let b = fs::read(generate(dir.path(), "b.json", &["--seed", "5"])).unwrap();
    let c = fs::read(generate(dir.path(), "c.json", &["--seed", "6"])).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn gen_prints_to_stdout_without_out() {
    let o = steamkit(&["gen", "--seed", "1"]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(doc.get("tasks").is_some());
}

#[test]
fn generous_budget_accepts_root() {
    let dir = TempDir::new().unwrap();
    let inst = generate(dir.path(), "i.json", &["--rho", "1.5"]);
    let out = dir.path().join("s");
    let o = steamkit(&["solve", p(&inst), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    let root = doc["stats"]["efficacy_root"].as_f64().unwrap();
    assert_eq!(doc["efficacy"].as_f64().unwrap(), root);
    assert!(doc["allocation"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).all(|v| v == 1));
}

#[test]
fn solution_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let inst = generate(dir.path(), "i.json", &["--seed", "2"]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(steamkit(&["solve", p(&inst), "--alpha", "0.4", "--out", p(&a)]).status.success());
    assert!(steamkit(&["solve", p(&inst), "--alpha", "0.4", "--out", p(&b)]).status.success());
    assert_eq!(fs::read(a.join("solution.json")).unwrap(), fs::read(b.join("solution.json")).unwrap());

    let stats = csv_rows(&a.join("stats.csv"));
    assert_eq!(stats.len(), 1);
    let cols = header(&a.join("stats.csv"));
    for c in ["status", "efficacy", "makespan", "nodes_expanded", "allocation_seconds", "scheduling_seconds", "motion_seconds"] {
        assert!(cols.iter().any(|h| h == c), "missing column {c}");
    }
}

#[test]
fn infeasible_budget_exits_2() {
    let dir = TempDir::new().unwrap();
    let inst = generate(dir.path(), "i.json", &[]);
    let out = dir.path().join("s");
    let o = steamkit(&["solve", p(&inst), "--budget", "0.01", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "infeasible");
    assert_eq!(csv_rows(&out.join("stats.csv"))[0].get(0), Some("infeasible"));
    assert!(!out.join("solution.json").exists());
}

#[test]
fn malformed_input_exits_1() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"tasks": 3}"#).unwrap();
    let o = steamkit(&["solve", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"]["kind"], "input");

    let o = steamkit(&["solve", p(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(1));

    let inst = generate(dir.path(), "i.json", &[]);
    let o = steamkit(&["solve", p(&inst), "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(1));

    let o = steamkit(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    error_json(&o);
}

#[test]
fn schema_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let inst = generate(dir.path(), "i.json", &[]);
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&inst).unwrap()).unwrap();
    doc["time_budget"] = serde_json::json!("soon");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, doc.to_string()).unwrap();
    let o = steamkit(&["solve", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"]["path"], "time_budget");
}

#[test]
fn invalid_instance_lists_violations() {
    let dir = TempDir::new().unwrap();
    let inst = generate(dir.path(), "i.json", &[]);
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&inst).unwrap()).unwrap();
    doc["time_budget"] = serde_json::json!(-1.0);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, doc.to_string()).unwrap();
    let o = steamkit(&["solve", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!error_json(&o)["error"]["violations"].as_array().unwrap().is_empty());
}

#[test]
fn learn_budget_one_gives_one_row_per_run() {
    let dir = TempDir::new().unwrap();
    let inst = generate(dir.path(), "i.json", &[]);
    let out = dir.path().join("l");
    let o = steamkit(&["learn", p(&inst), "--strategy", "all", "--budget", "1", "--seed", "0,1,2", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 4 * 3);
    let mut runs: Vec<(String, String)> = rows.iter().map(|r| (r[0].to_string(), r[1].to_string())).collect();
    runs.sort();
    runs.dedup();
    assert_eq!(runs.len(), 12);
    assert_eq!(fs::read_dir(out.join("models")).unwrap().count(), 12);
}

#[test]
fn regret_is_non_negative_and_cumulative() {
    let dir = TempDir::new().unwrap();
    let inst = generate(dir.path(), "i.json", &["--map-kind", "gp-sampled"]);
    let out = dir.path().join("l");
    let o = steamkit(&["learn", p(&inst), "--budget", "6", "--seed", "3", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cols = header(&out.join("metrics.csv"));
    let inst_col = cols.iter().position(|c| c == "instantaneous_regret").unwrap();
    let cum_col = cols.iter().position(|c| c == "cumulative_regret").unwrap();
    let mut prev = (String::new(), 0.0);
    for r in csv_rows(&out.join("metrics.csv")) {
        let regret: f64 = r[inst_col].parse().unwrap();
        let cumulative: f64 = r[cum_col].parse().unwrap();
        assert!(regret >= 0.0);
        if prev.0 != r[0] {
            prev = (r[0].to_string(), 0.0);
        }
        assert!((cumulative - (prev.1 + regret)).abs() < 1e-9);
        prev.1 = cumulative;
    }
}

#[test]
fn oracle_off_leaves_regret_empty() {
    let dir = TempDir::new().unwrap();
    let inst = generate(dir.path(), "i.json", &[]);
    let out = dir.path().join("l");
    let o = steamkit(&["learn", p(&inst), "--strategy", "box", "--budget", "3", "--oracle", "off", "--out", p(&out)]);
    assert!(o.status.success());
    for r in csv_rows(&out.join("metrics.csv")) {
        assert_eq!(&r[3], "");
        assert_eq!(&r[4], "");
        assert!(r[5].parse::<f64>().is_ok());
    }
}

#[test]
fn learned_model_plugs_into_solve() {
    let dir = TempDir::new().unwrap();
    let inst = generate(dir.path(), "i.json", &["--rho", "1.5"]);
    let out = dir.path().join("l");
    assert!(steamkit(&["learn", p(&inst), "--strategy", "exact", "--budget", "8", "--out", p(&out)]).status.success());
    let model = out.join("models").join("exact-seed0.json");
    let s = dir.path().join("s");
    let o = steamkit(&["solve", p(&inst), "--efficacy-from-model", p(&model), "--out", p(&s)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(s.join("solution.json").exists());
}

#[test]
fn unknown_strategy_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let inst = generate(dir.path(), "i.json", &[]);
    let o = steamkit(&["learn", p(&inst), "--strategy", "psychic", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_bounds_covers_the_alpha_grid() {
    let dir = TempDir::new().unwrap();
    let a = generate(dir.path(), "a.json", &["--seed", "1"]);
    let b = generate(dir.path(), "b.json", &["--seed", "2"]);
    let out = dir.path().join("v");
    let o = steamkit(&["validate-bounds", p(&a), p(&b), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cols = header(&out.join("bounds.csv"));
    for c in ["instance", "alpha", "gap", "prehoc", "posthoc", "holds"] {
        assert!(cols.iter().any(|h| h == c), "missing column {c}");
    }
    let rows = csv_rows(&out.join("bounds.csv"));
    assert_eq!(rows.len(), 22);
    let col = |name: &str| cols.iter().position(|c| c == name).unwrap();
    for r in &rows {
        assert_eq!(&r[col("holds")], "true");
        if &r[col("alpha")] == "0.0" {
            assert_eq!(r[col("gap")].parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn bench_writes_per_size_metrics_and_summary() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("b");
    let o = steamkit(&[
        "bench", "--robots", "3,4", "--strategy", "exact,box", "--budget", "2", "--seed", "0,1", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&out.join("metrics-n3.csv")).len(), 2 * 2 * 2);
    assert_eq!(csv_rows(&out.join("metrics-n4.csv")).len(), 2 * 2 * 2);
    assert_eq!(csv_rows(&out.join("summary.csv")).len(), 4);
}

#[test]
fn thread_override_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_steamkit"))
        .args(["gen"])
        .env("STEAMKIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_steamkit"))
        .args(["gen"])
        .env("STEAMKIT_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
}
