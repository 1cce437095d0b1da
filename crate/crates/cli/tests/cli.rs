use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use offpolicy_core::io::read_logged_csv;
use offpolicy_core::policies::TabularByLabel;
use offpolicy_core::selection::{select, CandidateSet};
use offpolicy_core::Policy;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_offpolicy"));
    c.env_remove("OFFPOLICY_THREADS");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Logged iris feedback with labels, from a faulty logging policy.
fn iris_fixture(dir: &Path) -> PathBuf {
    let iris = data_dir().join("iris.csv");
    let o = run(
        &[
            "convert",
            "--input",
            iris.to_str().unwrap(),
            "--behavior",
            "faulty:0.25",
            "--epsilon",
            "0.1",
            "--standardize",
            "--bias",
            "--seed",
            "7",
            "--out",
            "conv",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("conv/logged.csv")
}

#[test]
fn convert_writes_sidecar_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = iris_fixture(dir.path());
    let data = read_logged_csv(&path, None).unwrap();
    assert_eq!((data.len(), data.action_count(), data.feature_dim()), (150, 3, 5));
    assert!(data.has_labels());
    let manifest = read_json(&dir.path().join("conv/manifest.json"));
    assert_eq!(manifest["command"], "convert");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn evaluate_reports_ls_below_ix() {
    let dir = tempfile::tempdir().unwrap();
    let data = iris_fixture(dir.path());
    let o = run(&["evaluate", "--data", data.to_str().unwrap(), "--policy", "ideal:0.1", "--bounds", "LS,IX", "--out", "ev"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_json(&dir.path().join("ev/bounds.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["bound"], "LS");
    assert_eq!(rows[1]["bound"], "IX");
    assert!(rows[0]["upper"].as_f64().unwrap() <= rows[1]["upper"].as_f64().unwrap());
    let csv = fs::read_to_string(dir.path().join("ev/bounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("LS"));
    let manifest = read_json(&dir.path().join("ev/manifest.json"));
    assert_eq!(manifest["resolved"]["lambda"], "inv-sqrt-n");
}

#[test]
fn missing_file_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["evaluate", "--data", "no/such/log.csv", "--policy", "uniform"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no/such/log.csv"), "{}", stderr(&o));
}

#[test]
fn zero_delta_is_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let data = iris_fixture(dir.path());
    let o = run(&["evaluate", "--data", data.to_str().unwrap(), "--policy", "uniform", "--delta", "0", "--out", "ev"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("delta"));
    assert!(!dir.path().join("ev").exists());
}

#[test]
fn label_policies_need_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    fs::write(&path, "feature_0,action,cost,propensity\n1.0,0,-1,0.5\n2.0,1,0,0.5\n").unwrap();
    let o = run(&["evaluate", "--data", "log.csv", "--policy", "ideal:0.1"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("label"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "seed = 1\nsed = 2\n").unwrap();
    let o = run(&["--config", "run.toml", "study", "--preset", "coverage"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sed"), "{}", stderr(&o));
}

#[test]
fn config_file_drives_evaluate_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = iris_fixture(dir.path());
    let cfg = format!(
        "delta = 0.1\nout = \"from-file\"\n[evaluate]\ndata = {:?}\npolicy = \"ideal:0.2\"\nbounds = [\"LS\"]\nlambda = 0.3\n",
        data.to_str().unwrap()
    );
    fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let o = run(&["--config", "run.toml", "evaluate", "--lambda", "0.2"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_json(&dir.path().join("from-file/bounds.json"));
    assert_eq!(rows[0]["lambda"], 0.2);
    assert_eq!(rows[0]["delta"], 0.1);
}

#[test]
fn single_candidate_is_chosen() {
    let dir = tempfile::tempdir().unwrap();
    let data = iris_fixture(dir.path());
    let o = run(&["select", "--data", data.to_str().unwrap(), "--candidate", "only=uniform", "--out", "sel"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_json(&dir.path().join("sel/selection.json"))["chosen"], "only");
}

#[test]
fn select_matches_library_and_classifies() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = iris_fixture(dir.path());
    let specs = [("pi0", "faulty:0.25"), ("ideal", "ideal:0.1"), ("soft", "ideal:1"), ("uni", "uniform")];
    let mut args = vec!["select", "--data", data_path.to_str().unwrap(), "--behavior", "pi0", "--oracle-epsilon", "0.1", "--out", "sel"];
    let flags: Vec<String> = specs.iter().map(|(n, s)| format!("{n}={s}")).collect();
    for f in &flags {
        args.extend(["--candidate", f.as_str()]);
    }
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = read_json(&dir.path().join("sel/selection.json"));

    let data = read_logged_csv(&data_path, None).unwrap();
    let k = data.action_count();
    let pols: Vec<(String, Arc<dyn Policy>)> = vec![
        ("pi0".into(), Arc::new(offpolicy_core::datagen::faulty_policy(k, 0.25, &offpolicy_core::datagen::default_faulty_set(k), None).unwrap())),
        ("ideal".into(), Arc::new(offpolicy_core::datagen::ideal_policy(k, 0.1).unwrap())),
        ("soft".into(), Arc::new(offpolicy_core::datagen::ideal_policy(k, 1.0).unwrap())),
        ("uni".into(), Arc::new(offpolicy_core::policies::UniformPolicy::new(k))),
    ];
    let lib = select(&data, &CandidateSet::new(pols).unwrap(), 0.05).unwrap();
    assert_eq!(out["chosen"], lib.chosen.as_str());
    assert_eq!(out["lambda_used"].as_f64().unwrap(), lib.lambda_used);
    for (name, score) in &lib.scores {
        assert_eq!(out["scores"][name].as_f64().unwrap(), *score);
    }
    assert!(out["classification"]["outcome"].is_string());
    assert!(out["true_risks"]["ideal"].as_f64().unwrap() < out["true_risks"]["pi0"].as_f64().unwrap());
}

/// 99 well-logged records of action 0 and one lucky record of a rarely
/// logged action 1: IPS falls for the policy that always plays 1.
fn adversarial_fixture(dir: &Path) -> PathBuf {
    let mut text = String::from("feature_0,action,cost,propensity,label\n");
    for _ in 0..99 {
        text.push_str("1.0,0,-0.5,0.99,0\n");
    }
    text.push_str("1.0,1,-1.0,0.01,0\n");
    let path = dir.join("adv.csv");
    fs::write(&path, text).unwrap();
    let safe = serde_json::to_string(&TabularByLabel::deterministic(vec![0, 0], 2).unwrap().rows()).unwrap();
    let impostor = serde_json::to_string(&TabularByLabel::deterministic(vec![1, 1], 2).unwrap().rows()).unwrap();
    fs::write(dir.join("safe.json"), safe).unwrap();
    fs::write(dir.join("impostor.json"), impostor).unwrap();
    path
}

#[test]
fn ips_and_ls_disagree_on_an_impostor() {
    let dir = tempfile::tempdir().unwrap();
    adversarial_fixture(dir.path());
    let mut chosen = Vec::new();
    for method in ["IPS", "LS"] {
        let out = format!("sel-{method}");
        let o = run(
            &["select", "--data", "adv.csv", "--actions", "2", "--method", method, "--candidate", "safe=table:safe.json", "--candidate", "impostor=table:impostor.json", "--out", &out],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        chosen.push(read_json(&dir.path().join(out).join("selection.json"))["chosen"].as_str().unwrap().to_string());
    }
    assert_eq!(chosen, ["impostor", "safe"]);
}

#[test]
fn learn_writes_trace_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let data = iris_fixture(dir.path());
    let o = run(&["learn", "--data", data.to_str().unwrap(), "--epochs", "5", "--seed", "2", "--out", "a"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("a/trace.csv")).unwrap();
    let rows: Vec<&str> = trace.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        let objective: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!(objective.is_finite());
    }
    let result = read_json(&dir.path().join("a/result.json"));
    assert!(result["guaranteed_risk"].as_f64().unwrap().is_finite());

    let o = run(&["learn", "--data", data.to_str().unwrap(), "--epochs", "3", "--resume", "a/checkpoint.json", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("b/trace.csv")).unwrap();
    let epochs: Vec<usize> = trace.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(epochs, [5, 6, 7]);

    // Resuming reproduces an uninterrupted run bitwise.
    let o = run(&["learn", "--data", data.to_str().unwrap(), "--epochs", "8", "--seed", "2", "--out", "c"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let b = read_json(&dir.path().join("b/checkpoint.json"));
    let c = read_json(&dir.path().join("c/checkpoint.json"));
    assert_eq!(b, c);
}

#[test]
fn learn_defaults_follow_the_training_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.csv");
    fs::write(&path, "feature_0,feature_1,action,cost,propensity\n1.0,0.5,0,-1,0.5\n-1.0,0.5,1,0,0.5\n0.3,-2.0,1,-1,0.5\n").unwrap();
    let o = run(&["learn", "--data", "tiny.csv", "--out", "d"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = &read_json(&dir.path().join("d/manifest.json"))["resolved"]["config"];
    assert_eq!(cfg["learning_rate"], 1e-3);
    assert_eq!(cfg["epochs"], 100);
    assert_eq!(cfg["mc_samples"], 32);
    assert_eq!(cfg["lambda_grid"].as_array().unwrap().len(), 100);
    assert_eq!(fs::read_to_string(dir.path().join("d/trace.csv")).unwrap().lines().count(), 101);
}

#[test]
fn study_presets_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = data_dir();
    let o = run(&["study", "--preset", "coverage", "--replications", "200", "--out", "cov"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("cov/metrics.csv")).unwrap();
    for b in ["cIPS-EB", "IX", "cIPS-L=1", "LS", "sub-Gaussian"] {
        assert!(csv.lines().any(|l| l.contains(&format!(",{b},coverage_rate,"))), "{b} missing");
    }

    let o = run(&["study", "--preset", "tightness-desk", "--data-dir", data.to_str().unwrap(), "--out", "tight"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("tight/metrics.csv")).unwrap();
    assert!(csv.starts_with("scenario_id,dataset,method,metric,value,stderr\n"));
    for b in ["cIPS-EB", "IX", "cIPS-L=1", "LS"] {
        assert!(csv.contains(&format!(",{b},relative_radius,")));
    }

    let o = run(&["study", "--paper-experiment", "ops-desk", "--data-dir", data.to_str().unwrap(), "--threads", "2", "--out", "ops"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read_json(&dir.path().join("ops/summary.json"));
    for m in ["IPS", "SN", "cIPS-EB", "IX", "cIPS-L=1", "LS"] {
        let h = &summary["summary"]["by_method"][m];
        let total: u64 = ["Worse", "Better", "Best"].iter().map(|k| h[k].as_u64().unwrap()).sum();
        assert_eq!(total, 50, "{m}");
    }
    assert_eq!(read_json(&dir.path().join("ops/manifest.json"))["threads"], 2);
}

#[test]
fn study_reruns_are_bitwise_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = data_dir();
    for (threads, out) in [("1", "t1"), ("3", "t3")] {
        let o = bin()
            .args(["study", "--preset", "tightness-desk", "--data-dir", data.to_str().unwrap(), "--seed", "5", "--out", out])
            .env("OFFPOLICY_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("t1/metrics.csv")).unwrap();
    let b = fs::read(dir.path().join("t3/metrics.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(read_json(&dir.path().join("t3/manifest.json"))["threads"], 3);
}

#[test]
fn failed_cells_exit_one_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[study.spec]
study = "coverage"
k = 3
contexts = 10
epsilon = 0.2
tau0 = 0.25
tau = 0.1
n = 50
replications = 5
delta = 0.05
bounds = ["LS"]
seed = 0
"#;
    fs::write(dir.path().join("ok.toml"), cfg).unwrap();
    let o = run(&["--config", "ok.toml", "study", "--out", "ok"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // A three-point dataset cannot be split three ways; its cell fails
    // while the iris cell still runs.
    let bad = format!(
        r#"
[study.spec]
study = "selection"
seeds = [0]
epsilon = 0.2
tau0 = 0.2
tau = 0.2
fractions = [0.5, 0.3, 0.2]
methods = ["LS"]
lambda_rule = "union_bound"
delta = 0.05
seed = 0
candidates = ["pi0", "ideal"]

[[study.spec.datasets]]
kind = "blobs"
name = "tiny"
k = 3
p = 2
n = 3
separation = 1.0
seed = 1

[[study.spec.datasets]]
kind = "csv"
name = "iris"
path = {:?}
label_column = "label"
"#,
        data_dir().join("iris.csv").to_str().unwrap()
    );
    fs::write(dir.path().join("bad.toml"), bad).unwrap();
    let o = run(&["--config", "bad.toml", "study", "--out", "bad"], dir.path());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let summary = read_json(&dir.path().join("bad/summary.json"));
    assert!(summary["cells_failed"].as_u64().unwrap() >= 1);
    assert!(dir.path().join("bad/metrics.csv").exists());
}
