use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use lcbn::io::{read_q, read_responses};
use lcbn::{marginal_loglik, ItemParams, ProportionVector};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn lcbn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lcbn"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn write_config(dir: &Path, value: Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn simulate(dir: &Path, config: &Path) -> PathBuf {
    let out = dir.join("sim");
    let status = run(lcbn().args(["simulate", "--config"]).arg(config).arg("--out").arg(&out)).status;
    assert!(status.success());
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_four_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &configs().join("smoke.json"));
    for name in ["responses.csv", "q.csv", "hierarchy.json", "truth.json", "manifest.json"] {
        assert!(sim.join(name).exists(), "{name}");
    }
    let text = fs::read_to_string(sim.join("responses.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 500);
    assert!(lines.iter().all(|l| l.split(',').count() == 24 && l.split(',').all(|c| c == "0" || c == "1")));
    let truth = json(&sim.join("truth.json"));
    assert_eq!(truth["truth"]["hierarchy"]["K"], 8);
    let manifest = json(&sim.join("manifest.json"));
    let digest = hex::encode(Sha256::digest(fs::read(sim.join("responses.csv")).unwrap()));
    assert_eq!(manifest["outputs"]["responses.csv"], Value::String(digest));
}

#[test]
fn missingness_rate_is_respected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        serde_json::json!({"model": "dina", "n": 5000, "r": 0.1, "seed": 3, "missing_rate": 0.3}),
    );
    let sim = simulate(dir.path(), &config);
    let text = fs::read_to_string(sim.join("responses.csv")).unwrap();
    let cells: Vec<&str> = text.lines().flat_map(|l| l.split(',')).collect();
    assert!(cells.len() >= 100_000);
    let rate = cells.iter().filter(|&&c| c == "NA").count() as f64 / cells.len() as f64;
    assert!((rate - 0.3).abs() <= 0.02, "{rate}");
}

#[test]
fn unknown_config_field_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), serde_json::json!({"model": "dina", "n": 10, "r": 0.1, "sede": 3}));
    let out = lcbn()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));
}

fn strip_wall_clock(mut v: Value) -> Value {
    v["manifest"].as_object_mut().unwrap().remove("wall_clock_seconds");
    v
}

#[test]
fn fit_report_is_consistent_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &configs().join("smoke.json"));
    let fit = |name: &str| {
        let path = dir.path().join(name);
        let status = run(lcbn()
            .args(["--threads", "1", "fit", "--restarts", "2", "--lambda-grid", "-1.2,-2"])
            .arg("--responses")
            .arg(sim.join("responses.csv"))
            .arg("--q")
            .arg(sim.join("q.csv"))
            .arg("--out")
            .arg(&path))
        .status;
        assert_eq!(status.code(), Some(0));
        json(&path)
    };
    let report = fit("a.json");
    assert_eq!(strip_wall_clock(report.clone()), strip_wall_clock(fit("b.json")));
    assert!(report["selection"]["grid"].as_array().unwrap().len() == 2);
    assert_eq!(report["manifest"]["config"]["control"]["lambda_grid"], serde_json::json!([-1.2, -2.0]));

    let params: ItemParams = serde_json::from_value(report["params"].clone()).unwrap();
    let p: ProportionVector = serde_json::from_value(report["proportions"].clone()).unwrap();
    let data = read_responses(sim.join("responses.csv")).unwrap();
    let q = read_q(sim.join("q.csv")).unwrap();
    let recomputed = marginal_loglik(&params, &q, &p, &data).unwrap();
    assert!((recomputed - report["loglik"].as_f64().unwrap()).abs() < 1e-8);
}

#[test]
fn fit_on_given_hierarchy_skips_selection() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &configs().join("smoke.json"));
    let out = run(lcbn()
        .args(["fit", "--restarts", "1"])
        .arg("--responses")
        .arg(sim.join("responses.csv"))
        .arg("--q")
        .arg(sim.join("q.csv"))
        .arg("--hierarchy")
        .arg(sim.join("hierarchy.json")));
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["selection"].is_null());
    assert_eq!(report["hierarchy"], json(&sim.join("hierarchy.json")));
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let responses = dir.path().join("r.csv");
    let q = dir.path().join("q.csv");
    fs::write(&responses, "1,0,1\n0,1,1\n").unwrap();
    fs::write(&q, "1,0\n0,1\n").unwrap();
    let out = lcbn().arg("fit").arg("--responses").arg(&responses).arg("--q").arg(&q).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));

    fs::write(&responses, "1,0\nNA,NA\n").unwrap();
    let out = lcbn().arg("fit").arg("--responses").arg(&responses).arg("--q").arg(&q).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

fn check_id(q: &Path, h: &Path, extra: &[&str]) -> (Option<i32>, Value) {
    let out = lcbn().arg("check-id").arg("--q").arg(q).arg("--hierarchy").arg(h).args(extra).output().unwrap();
    let report = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code(), report)
}

#[test]
fn check_id_exit_codes_follow_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Basis rows, six per attribute, on a chain.
    let basis: String = (0..18).map(|j| if j % 3 == 0 { "1,0,0\n" } else if j % 3 == 1 { "0,1,0\n" } else { "0,0,1\n" }).collect();
    fs::write(d.join("basis.csv"), basis).unwrap();
    fs::write(d.join("chain.txt"), "K = 3\n1 -> 2\n2 -> 3\n").unwrap();
    let (code, report) = check_id(&d.join("basis.csv"), &d.join("chain.txt"), &[]);
    assert_eq!(code, Some(0));
    assert_eq!(report["verdict"], "pass");

    // The ancestor is measured by one item only.
    fs::write(d.join("thin.csv"), "1,0,0\n0,1,0\n0,1,0\n0,0,1\n0,0,1\n").unwrap();
    let (code, report) = check_id(&d.join("thin.csv"), &d.join("chain.txt"), &["--theorem", "linear-necessary"]);
    assert_eq!(code, Some(4));
    let witness = &report["conditions"]["B_star"]["witness"];
    assert_eq!(witness["attribute"], 1);
    assert_eq!(witness["count"], 1);

    let (code, report) = check_id(&d.join("basis.csv"), &d.join("chain.txt"), &["--theorem", "generic", "--budget", "0"]);
    assert_eq!(code, Some(5));
    assert_eq!(report["verdict"], "unknown");

    fs::write(d.join("fork.txt"), "K = 3\n1 -> 2\n1 -> 3\n").unwrap();
    let (code, _) = check_id(&d.join("basis.csv"), &d.join("fork.txt"), &["--theorem", "linear-necessary"]);
    assert_eq!(code, Some(2));
}

#[test]
fn smoke_experiment_is_quick_and_tabulated() {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let status = run(lcbn()
        .args(["experiment", "--config"])
        .arg(configs().join("smoke.json"))
        .arg("--out")
        .arg(dir.path()))
    .status;
    assert!(status.success());
    assert!(started.elapsed().as_secs_f64() < 10.0);
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("smoke,dina,500,"));
    let archive = json(&dir.path().join("replicates.json"));
    assert_eq!(archive["reports"][0]["records"].as_array().unwrap().len(), 1);
}

#[test]
fn shipped_configs_parse() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let file = lcbn::experiments::ExperimentFile::read(&path).unwrap();
        for cfg in file.into_configs() {
            cfg.truth().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
}
