use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[disturbance]
kind = "smoke"

[grid]
x = [7, 7]
z = 5
actions = 5
s = 6

[run]
alpha = [0.99, 0.05]
r = [0.2, 1.0, 2.0]
rollouts = 200
x0 = [2.5, 3.0]
persist_tables = true
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cvar-safety"))
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus/tiny.txt")
}

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    (dir, cfg)
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn sweep_writes_one_row_per_dual_value() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &["sweep"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows = data_lines(&text);
    assert_eq!(rows.len(), 1 + 6);
    assert_eq!(rows[0].split(',').count(), 1 + 49);
    let last: Vec<&str> = rows[6].split(',').collect();
    assert_eq!(last[0], "2");
    assert!(last[1..].iter().all(|v| *v == "0"));
    assert!(text.starts_with("# config_hash="));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(meta["schema_version"], 1);
    assert_eq!(meta["grid"]["x_nodes"], serde_json::json!([7, 7]));
    // progress goes to stderr, one line per s
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().filter(|l| l.contains("done")).count(), 6);
}

#[test]
fn safe_sets_from_a_sweep() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &["sweep"]).status.success());
    let o = run(&cfg, &out, &["safe-sets"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in [
        "surface_alpha=0.99.csv",
        "surface_alpha=0.05.csv",
        "mask_alpha=0.05_r=1.csv",
        "summary.json",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let counts = summary["counts"].as_array().unwrap();
    assert_eq!(counts.len(), 6);
    let count = |a: f64, r: f64| {
        counts.iter().find(|c| c["alpha"] == a && c["r"] == r).unwrap()["count"]
            .as_u64()
            .unwrap()
    };
    assert_eq!(count(0.99, 2.0), 49);
    assert_eq!(count(0.05, 2.0), 49);
    assert!(count(0.05, 1.0) <= count(0.99, 1.0));
    assert!(count(0.99, 0.2) <= count(0.99, 1.0));
    let mask = std::fs::read_to_string(out.join("mask_alpha=0.05_r=1.csv")).unwrap();
    let rows = data_lines(&mask);
    assert_eq!(rows[0], "x1,x2,in_set");
    assert_eq!(rows.len(), 50);
    let members = rows[1..].iter().filter(|r| r.ends_with(",1")).count() as u64;
    assert_eq!(members, count(0.05, 1.0));
}

#[test]
fn safe_sets_without_sweep_fails() {
    let (dir, cfg) = setup(SMALL);
    let o = run(&cfg, &dir.path().join("nothing"), &["safe-sets"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep.csv"));
}

#[test]
fn safe_sets_reject_a_sweep_for_another_model() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("out");
    assert!(run(&cfg, &out, &["sweep"]).status.success());
    let other = dir.path().join("other.toml");
    std::fs::write(&other, SMALL.replace("kind = \"smoke\"", "kind = \"moment-matched\"")).unwrap();
    let o = run(&other, &out, &["safe-sets"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("different model"));
}

#[test]
fn deploy_with_zero_rollouts_reports_dp_values_only() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &["deploy", "--rollouts", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("deploy.json")).unwrap()).unwrap();
    assert!(s["estimate"].is_null());
    assert!(s["dp_value"].as_f64().unwrap() >= 0.0);
    assert!(!out.join("rollouts.csv").exists());
    assert!(out.join("policy_table.csv").exists());
}

#[test]
fn deploy_writes_rollouts_and_summary() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &["deploy", "--alpha", "0.05", "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("deploy.json")).unwrap()).unwrap();
    assert_eq!(s["alpha"], 0.05);
    assert_eq!(s["seed"], 4);
    assert!(s["estimate"]["cvar_hat"].is_f64());
    let text = std::fs::read_to_string(out.join("rollouts.csv")).unwrap();
    let rows = data_lines(&text);
    assert_eq!(rows[0], "rollout_id,t,x1,x2,z,u,w");
    assert_eq!(rows.len(), 1 + 200 * 21);
    let table = std::fs::read_to_string(out.join("value_table.csv")).unwrap();
    assert_eq!(data_lines(&table)[0], "t,i1,i2,z_index,value");
}

#[test]
fn deploy_needs_an_initial_state() {
    let (dir, cfg) = setup(&SMALL.replace("x0 = [2.5, 3.0]", ""));
    let o = run(&cfg, &dir.path().join("out"), &["deploy"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.x0"));
    let (dir, cfg) = setup(SMALL);
    let o = run(&cfg, &dir.path().join("out"), &["deploy", "--x0", "7,1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.x0"));
}

#[test]
fn config_errors_name_the_field() {
    let (dir, cfg) = setup(&SMALL.replace("alpha = [0.99, 0.05]", "alpha = [0.99, 0.0]"));
    let o = run(&cfg, &dir.path().join("out"), &["sweep"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.alpha[1]"));
    let (dir, cfg) = setup("[model.params]\nkbar2 = \"tall\"\n");
    let o = run(&cfg, &dir.path().join("out"), &["sweep"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.params.kbar2"));
}

#[test]
fn shipped_corpus_passes() {
    let dir = TempDir::new().unwrap();
    let o = bin()
        .arg("oracle")
        .arg(corpus())
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(!stdout.contains("FAIL"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle_report.json")).unwrap()).unwrap();
    assert!(report["instances"].as_u64().unwrap() >= 50);
    assert_eq!(report["instances"], report["passed"]);
}

#[test]
fn corrupted_corpus_reports_the_line() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(corpus()).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let target = lines.iter().position(|l| l.starts_with("outcome")).unwrap();
    lines[target] = lines[target].replace(':', ";");
    let path = dir.path().join("bad.txt");
    std::fs::write(&path, lines.join("\n")).unwrap();
    let o = bin().arg("oracle").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(&format!("bad.txt:{}:", target + 1)), "{err}");
}

#[test]
fn empty_corpus_passes_with_warning() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("empty.txt");
    std::fs::write(&path, "# nothing here\n").unwrap();
    let o = bin().arg("oracle").arg(&path).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn compare_designs_lists_every_design() {
    let (dir, cfg) = setup(SMALL);
    let out = dir.path().join("out");
    let o = run(&cfg, &out, &["compare-designs", "--r", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    let rows = data_lines(&text);
    assert_eq!(rows[0], "design,alpha,r,count,total,change_vs_first");
    assert_eq!(rows.len(), 1 + 4 * 2);
    for d in ["a", "b", "c", "d"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{d},"))).count(), 2);
    }
}

#[test]
fn tiny_model_runs_through_the_cli() {
    let (dir, _) = setup("");
    let corpus = corpus();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(
        &cfg,
        format!(
            "[model.tiny]\ncorpus = \"{}\"\nname = \"tiny-2024-005\"\n[run]\nalpha = [0.25]\nr = [0.5]\nx0 = [0.0]\nrollouts = 1000\n",
            corpus.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    for cmd in ["sweep", "safe-sets", "deploy"] {
        let o = run(&cfg, &out, &[cmd]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let mask = std::fs::read_to_string(out.join("mask_alpha=0.25_r=0.5.csv")).unwrap();
    assert_eq!(data_lines(&mask)[0], "x1,in_set");
}
